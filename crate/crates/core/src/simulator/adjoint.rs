//! Reverse-mode engine: the exact transpose of the tangent rules.
//!
//! The forward pass stores the neuron state every `checkpoint_interval`
//! steps plus the spike raster. The backward pass walks the segments in
//! reverse: it restores the segment's start state, rebuilds the spike queue
//! from the raster, recomputes the segment while recording per-step state,
//! then propagates adjoints back through it. Adjoints of future jumps live in
//! a per-neuron ring of the queue's capacity.

use super::{drive, empty_trace, prepare_inputs, Kernel, NoObserver, Observer, SimTrace};
use crate::error::Result;
use crate::gradcore::{jump_adjoint, reset_ratio};
use crate::network::{Compiled, Network, Params};
use crate::neurons::{Jumps, NeuronModel, NeuronState, V_THRESHOLD};
use crate::objectives::{superspike, Objective};

use super::Sample;

#[derive(Debug, Clone)]
pub struct GradResult {
    pub trace: SimTrace,
    pub loss: f64,
    pub grad: Params,
}

#[derive(Debug, Clone, Copy, Default)]
struct StepRecord {
    state: NeuronState,
    jumps: Jumps,
    spiked: bool,
    frozen: bool,
    clipped: bool,
}

struct Recorder<'r> {
    base: usize,
    n: usize,
    rec: &'r mut [StepRecord],
}

impl Observer for Recorder<'_> {
    fn neuron(&mut self, k: usize, j: usize, state: &NeuronState, jumps: &Jumps, spiked: bool, clipped: bool) {
        self.rec[(k - self.base) * self.n + j] = StepRecord {
            state: *state,
            jumps: *jumps,
            spiked,
            frozen: false,
            clipped,
        };
    }

    fn frozen(&mut self, k: usize, j: usize) {
        self.rec[(k - self.base) * self.n + j] = StepRecord {
            frozen: true,
            ..StepRecord::default()
        };
    }
}

/// Simulates one sample and returns the loss and its gradient.
pub fn run_with_gradients(
    net: &Network,
    comp: &Compiled,
    sample: &Sample,
    objective: &Objective,
) -> Result<GradResult> {
    let inputs = prepare_inputs(net, sample)?;
    let interval = net.config.checkpoint_interval;
    let mut kernel = Kernel::new(net, comp);
    let mut checkpoints = Vec::new();
    let trace = drive(&mut kernel, &inputs, &mut NoObserver, |k, ker| {
        if k % interval == 0 {
            checkpoints.push(ker.snapshot());
        }
    })?;
    let layout = &net.layout;
    let lg = objective.evaluate(
        &trace.spike_times,
        net.config.horizon(),
        layout,
        &net.params.readout,
        sample.label,
    );
    let mut grad = Params::zeros_like(&net.params);
    grad.readout.copy_from_slice(&lg.readout);

    let n = layout.n_neurons();
    let n_in = layout.n_in;
    let cap = net.capacity;
    let t_run = trace.steps_run;
    let dynamics = &comp.dynamics;
    let tau_syn = dynamics.params.tau_syn;
    let adapt_coeff = dynamics.adapt_jump_time_coeff();
    let adex = dynamics.model == NeuronModel::Adex;
    let opts = net.config.grad;
    let weights = &net.params.weights;

    let mut lam_v = vec![0.0; n];
    let mut lam_i = vec![0.0; n];
    let mut lam_a = vec![0.0; n];
    let mut ring = vec![Jumps::default(); n * cap];
    let mut delay_adj = vec![0.0; layout.n_synapses()];
    let mut spike_adj = vec![0.0; n];
    let mut remaining: Vec<usize> = trace.spike_times.iter().map(|s| s.len()).collect();
    let mut rec = vec![StepRecord::default(); interval * n];

    // Adjoint of one emission; returns its spike-time adjoint.
    let emit = |neuron: usize, k: usize, ring: &[Jumps], grad: &mut Params, delay_adj: &mut [f64]| {
        let mut lt = 0.0;
        for &s in &layout.outgoing[neuron] {
            let m = k + comp.steps[s];
            if m >= t_run {
                continue;
            }
            let r = &ring[layout.synapses[s].post * cap + m % cap];
            let (gw, gt) = jump_adjoint(weights[s], tau_syn, r.i, r.v);
            grad.weights[s] += gw;
            delay_adj[s] += gt;
            lt += gt;
        }
        lt
    };

    let n_seg = t_run.div_ceil(interval);
    for seg in (0..n_seg).rev() {
        let s0 = seg * interval;
        let s1 = (s0 + interval).min(t_run);
        kernel.restore(&checkpoints[seg]);
        kernel.rebuild_queue(s0, &inputs, &trace.raster);
        let mut cursor = inputs.partition_point(|e| e.0 < s0);
        let mut scratch = empty_trace(net, comp);
        let mut recorder = Recorder {
            base: s0,
            n,
            rec: &mut rec,
        };
        for k in s0..s1 {
            kernel.step(k, &inputs, &mut cursor, &mut recorder, &mut scratch)?;
        }

        let mut ihi = inputs.partition_point(|e| e.0 < s1);
        let mut rhi = trace.raster.partition_point(|e| (e.step as usize) < s1);
        for k in (s0..s1).rev() {
            let ilo = inputs[..ihi].partition_point(|e| e.0 < k);
            for e in &inputs[ilo..ihi] {
                emit(e.1, k, &ring, &mut grad, &mut delay_adj);
            }
            ihi = ilo;
            let rlo = trace.raster[..rhi].partition_point(|e| (e.step as usize) < k);
            for e in &trace.raster[rlo..rhi] {
                let j = e.neuron as usize;
                remaining[j] -= 1;
                let mut lt = lg.time_adj[j][remaining[j]];
                lt += emit(j, k, &ring, &mut grad, &mut delay_adj);
                if adex && k + 1 < t_run {
                    lt += adapt_coeff * ring[j * cap + (k + 1) % cap].adapt;
                }
                spike_adj[j] = lt;
            }
            rhi = rlo;

            let row = &rec[(k - s0) * n..(k - s0 + 1) * n];
            for j in n_in..n {
                let r = &row[j];
                let slot = j * cap + k % cap;
                if r.frozen {
                    ring[slot] = Jumps::default();
                    continue;
                }
                let (lv, li, la) = (lam_v[j], lam_i[j], lam_a[j]);
                ring[slot] = Jumps {
                    i: li,
                    v: if r.spiked { 0.0 } else { lv },
                    adapt: la,
                };
                let jac = dynamics.jacobian(&r.state, r.clipped);
                let mut nv = jac.da_dv * la;
                let mut ni = jac.di_di * li;
                let mut na = jac.da_da * la;
                if r.spiked {
                    let dmin = dynamics.dvdt_minus(&r.state);
                    let g = if dmin < opts.slope_guard { opts.slope_guard } else { dmin };
                    let dplus = dynamics.dvdt_plus(&r.state, &r.jumps);
                    nv += reset_ratio(&opts, dplus, g) * lv - spike_adj[j] / g;
                } else {
                    nv += jac.dv_dv * lv;
                    ni += jac.dv_di * lv;
                    na += jac.dv_da * lv;
                }
                let c = lg.count_adj[j];
                if c != 0.0 {
                    nv += superspike(r.state.v - V_THRESHOLD).1 * c;
                }
                lam_v[j] = nv;
                lam_i[j] = ni;
                lam_a[j] = na;
            }
        }
    }

    net.delay_vjp(&delay_adj, &mut grad);
    grad.check_finite_gradient()?;
    Ok(GradResult {
        trace,
        loss: lg.value,
        grad,
    })
}
