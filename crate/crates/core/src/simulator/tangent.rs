//! Forward-mode engine: dense tangents for every parameter direction.
//!
//! Costs one tangent vector per neuron per direction, so it is meant for
//! small networks (gradient checks, cross-checking the reverse engine).

use super::adjoint::GradResult;
use super::{drive, prepare_inputs, Kernel, Observer, Sample};
use crate::error::Result;
use crate::gradcore::{dequeue_jumps, enqueue_adaptation, enqueue_spike, reset_ratio, SpikeQueue, SpikeTangent, TangentSlot};
use crate::network::{Compiled, Network, Params};
use crate::neurons::{Jumps, NeuronModel, NeuronState, V_THRESHOLD};
use crate::objectives::{superspike, Objective};

struct Tangents<'a> {
    net: &'a Network,
    comp: &'a Compiled,
    p: usize,
    queue: SpikeQueue<TangentSlot>,
    tv: Vec<f64>,
    ti: Vec<f64>,
    ta: Vec<f64>,
    jumps: Vec<f64>,
    /// Spike-time tangent of each neuron's latest spike.
    t_spike: Vec<f64>,
    /// Spike-time tangents per neuron, in spike order.
    spikes: Vec<Vec<Vec<f64>>>,
    /// Surrogate count tangents (rate mode).
    counts: Option<Vec<f64>>,
    t_weight: Vec<Vec<(usize, f64)>>,
    t_delay: Vec<Vec<(usize, f64)>>,
    zeros: Vec<f64>,
    post: Vec<f64>,
}

impl Observer for Tangents<'_> {
    fn neuron(&mut self, _k: usize, j: usize, s: &NeuronState, jumps: &Jumps, spiked: bool, clipped: bool) {
        let p = self.p;
        let dynamics = &self.comp.dynamics;
        let opts = &self.net.config.grad;
        dequeue_jumps(&mut self.queue, j, &mut self.jumps);
        let (tji, rest) = self.jumps.split_at(p);
        let (tjv, tja) = rest.split_at(p);
        let jac = dynamics.jacobian(s, clipped);
        let range = j * p..(j + 1) * p;
        let tv = &mut self.tv[range.clone()];
        let ti = &mut self.ti[range.clone()];
        let ta = &mut self.ta[range.clone()];
        if let Some(counts) = &mut self.counts {
            let d = superspike(s.v - V_THRESHOLD).1;
            for (c, t) in counts[range.clone()].iter_mut().zip(tv.iter()) {
                *c += d * t;
            }
        }
        let ratio = if spiked {
            let dmin = dynamics.dvdt_minus(s);
            let g = if dmin < opts.slope_guard { opts.slope_guard } else { dmin };
            let ts = &mut self.t_spike[range.clone()];
            for (o, t) in ts.iter_mut().zip(tv.iter()) {
                *o = -t / g;
            }
            self.spikes[j].push(ts.to_vec());
            reset_ratio(opts, dynamics.dvdt_plus(s, jumps), g)
        } else {
            0.0
        };
        for q in 0..p {
            let (v0, i0, a0) = (tv[q], ti[q], ta[q]);
            tv[q] = if spiked {
                ratio * v0
            } else {
                jac.dv_dv * v0 + jac.dv_di * i0 + jac.dv_da * a0 + tjv[q]
            };
            ti[q] = jac.di_di * i0 + tji[q];
            ta[q] = jac.da_da * a0 + jac.da_dv * v0 + tja[q];
        }
    }

    fn frozen(&mut self, _k: usize, j: usize) {
        self.queue.take(j);
    }

    fn emit(&mut self, _k: usize, neuron: usize) {
        let p = self.p;
        let layout = &self.net.layout;
        let is_input = neuron < layout.n_in;
        let t_pre = if is_input {
            &self.zeros[..]
        } else {
            &self.t_spike[neuron * p..(neuron + 1) * p]
        };
        let tau_syn = self.comp.dynamics.params.tau_syn;
        for &s in &layout.outgoing[neuron] {
            self.post.copy_from_slice(t_pre);
            for &(q, x) in &self.t_delay[s] {
                self.post[q] += x;
            }
            enqueue_spike(
                &mut self.queue,
                layout.synapses[s].post,
                self.comp.steps[s],
                self.net.params.weights[s],
                tau_syn,
                &SpikeTangent {
                    t_weight: &self.t_weight[s],
                    t_post: &self.post,
                },
            );
        }
        if !is_input && self.comp.dynamics.model == NeuronModel::Adex {
            enqueue_adaptation(
                &mut self.queue,
                neuron,
                self.comp.dynamics.params.b,
                self.comp.dynamics.adapt_jump_time_coeff(),
                t_pre,
            );
        }
    }

    fn end_step(&mut self, _k: usize) {
        self.queue.advance();
    }
}

/// Loss gradient by forward-mode tangents, one direction per parameter.
pub fn tangent_gradients(
    net: &Network,
    comp: &Compiled,
    sample: &Sample,
    objective: &Objective,
) -> Result<GradResult> {
    let inputs = prepare_inputs(net, sample)?;
    let layout = &net.layout;
    let n = layout.n_neurons();
    let p = net.params.len();
    let n_syn = layout.n_synapses();
    let mut t_delay = vec![Vec::new(); n_syn];
    for (s, td) in t_delay.iter_mut().enumerate() {
        net.delay_jacobian(s, td);
    }
    let mut obs = Tangents {
        net,
        comp,
        p,
        queue: SpikeQueue::new(n, net.capacity),
        tv: vec![0.0; n * p],
        ti: vec![0.0; n * p],
        ta: vec![0.0; n * p],
        jumps: vec![0.0; 3 * p],
        t_spike: vec![0.0; n * p],
        spikes: vec![Vec::new(); n],
        counts: matches!(objective, Objective::Readout).then(|| vec![0.0; n * p]),
        t_weight: (0..n_syn).map(|s| vec![(s, 1.0)]).collect(),
        t_delay,
        zeros: vec![0.0; p],
        post: vec![0.0; p],
    };
    let mut kernel = Kernel::new(net, comp);
    let trace = drive(&mut kernel, &inputs, &mut obs, |_, _| {})?;
    let lg = objective.evaluate(
        &trace.spike_times,
        net.config.horizon(),
        layout,
        &net.params.readout,
        sample.label,
    );
    let mut flat = vec![0.0; p];
    for (j, spikes) in obs.spikes.iter().enumerate() {
        for (idx, t) in spikes.iter().enumerate() {
            let a = lg.time_adj[j][idx];
            if a != 0.0 {
                for (f, x) in flat.iter_mut().zip(t) {
                    *f += a * x;
                }
            }
        }
    }
    if let Some(counts) = &obs.counts {
        for (j, c) in lg.count_adj.iter().enumerate() {
            if *c != 0.0 {
                for (f, x) in flat.iter_mut().zip(&counts[j * p..(j + 1) * p]) {
                    *f += c * x;
                }
            }
        }
    }
    let mut grad = Params::zeros_like(&net.params);
    grad.set_flat(&flat);
    for (g, r) in grad.readout.iter_mut().zip(&lg.readout) {
        *g += r;
    }
    grad.check_finite_gradient()?;
    Ok(GradResult {
        trace,
        loss: lg.value,
        grad,
    })
}
