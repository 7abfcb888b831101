//! Time-stepped simulation.
//!
//! One primal kernel drives every engine: the plain forward run, the
//! forward-mode tangent engine and the checkpointed reverse engine all observe
//! the same sequence of operations, so their primal trajectories are
//! bit-identical.
//!
//! Step `k` of the kernel:
//! 1. take every neuron's arriving jumps,
//! 2. threshold on `v_k`,
//! 3. advance without reset, then reset the neurons that fired,
//! 4. emit: input spikes scheduled for step `k` (in list order), then the
//!    neurons that fired (ascending index), each to its outgoing synapses
//!    (ascending synapse index) at `k + steps[s]`.

mod adjoint;
mod tangent;

pub use adjoint::{run_with_gradients, GradResult};
pub use tangent::tangent_gradients;

use crate::error::{Error, Result};
use crate::gradcore::{guarded_slope, Counters, SpikeQueue};
use crate::network::{Compiled, Network, Topology};
use crate::neurons::{threshold, Jumps, NeuronModel, NeuronState, V_RESET};
use crate::objectives::{hidden_counts, output_times, readout_logits};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSpike {
    pub neuron: usize,
    /// Milliseconds.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub inputs: Vec<InputSpike>,
    pub label: usize,
}

/// A non-input spike: `(neuron, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterEntry {
    pub neuron: u32,
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    /// Steps actually simulated (less than `n_steps` after an early stop).
    pub steps_run: usize,
    /// Non-input spikes in emission order.
    pub raster: Vec<RasterEntry>,
    /// Spike times per neuron (empty for inputs).
    pub spike_times: Vec<Vec<f64>>,
    pub counters: Counters,
}

impl SimTrace {
    pub fn output_times(&self, net: &Network) -> Vec<f64> {
        output_times(&self.spike_times, &net.layout, net.config.horizon())
    }

    pub fn hidden_counts(&self, net: &Network) -> Vec<f64> {
        hidden_counts(&self.spike_times, &net.layout)
    }
}

/// Predicted class and whether the network gave no evidence at all.
///
/// Feed-forward: earliest output spike (silent outputs sit at the horizon).
/// Recurrent: largest readout logit of the hidden spike counts. Ties go to the
/// lowest index.
pub fn classify(trace: &SimTrace, net: &Network) -> (usize, bool) {
    match net.config.topology {
        Topology::FeedForward => {
            let times = trace.output_times(net);
            let horizon = net.config.horizon();
            let mut best = 0;
            for (k, t) in times.iter().enumerate() {
                if *t < times[best] {
                    best = k;
                }
            }
            (best, times.iter().all(|t| *t >= horizon))
        }
        Topology::Recurrent => {
            let counts = trace.hidden_counts(net);
            let logits = readout_logits(&counts, &net.params.readout, net.config.n_out);
            let mut best = 0;
            for (k, z) in logits.iter().enumerate() {
                if *z > logits[best] {
                    best = k;
                }
            }
            (best, counts.iter().all(|c| *c == 0.0))
        }
    }
}

/// Input spikes as `(emission step, neuron)`, sorted by step (stable), with
/// spikes at or past the horizon dropped.
pub(crate) fn prepare_inputs(net: &Network, sample: &Sample) -> Result<Vec<(usize, usize)>> {
    let dt = net.config.dt;
    let mut out = Vec::with_capacity(sample.inputs.len());
    for sp in &sample.inputs {
        if sp.neuron >= net.config.n_in {
            return Err(Error::InvalidInput(format!(
                "input spike on neuron {} but the network has {} inputs",
                sp.neuron, net.config.n_in
            )));
        }
        if !(sp.time >= 0.0 && sp.time.is_finite()) {
            return Err(Error::InvalidInput(format!("bad input spike time {}", sp.time)));
        }
        let step = (sp.time / dt + 0.5).floor() as usize;
        if step < net.config.n_steps {
            out.push((step, sp.neuron));
        }
    }
    out.sort_by_key(|e| e.0);
    Ok(out)
}

/// Hooks into the kernel, called in simulation order.
pub(crate) trait Observer {
    /// An active neuron at step `k`, before its update. `state` is `(v_k, i_k, a_k)`.
    fn neuron(&mut self, _k: usize, _j: usize, _state: &NeuronState, _jumps: &Jumps, _spiked: bool, _clipped: bool) {}
    /// A one-spike neuron that already fired; its arrivals are discarded.
    fn frozen(&mut self, _k: usize, _j: usize) {}
    /// `neuron` emits at step `k` (before its arrivals are enqueued).
    fn emit(&mut self, _k: usize, _neuron: usize) {}
    fn end_step(&mut self, _k: usize) {}
}

pub(crate) struct NoObserver;
impl Observer for NoObserver {}

/// Saved per-neuron state.
#[derive(Debug, Clone)]
pub(crate) struct Snapshot {
    v: Vec<f64>,
    i: Vec<f64>,
    a: Vec<f64>,
    spiked: Vec<bool>,
}

pub(crate) struct Kernel<'a> {
    pub net: &'a Network,
    pub comp: &'a Compiled,
    pub v: Vec<f64>,
    pub i: Vec<f64>,
    pub a: Vec<f64>,
    pub spiked: Vec<bool>,
    pub queue: SpikeQueue<Jumps>,
    pub one_spike: bool,
    fired: Vec<usize>,
}

impl<'a> Kernel<'a> {
    pub fn new(net: &'a Network, comp: &'a Compiled) -> Self {
        let n = net.layout.n_neurons();
        Kernel {
            net,
            comp,
            v: vec![0.0; n],
            i: vec![0.0; n],
            a: vec![0.0; n],
            spiked: vec![false; n],
            queue: SpikeQueue::new(n, net.capacity),
            one_spike: net.config.one_spike(),
            fired: Vec::new(),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            v: self.v.clone(),
            i: self.i.clone(),
            a: self.a.clone(),
            spiked: self.spiked.clone(),
        }
    }

    pub fn restore(&mut self, s: &Snapshot) {
        self.v.copy_from_slice(&s.v);
        self.i.copy_from_slice(&s.i);
        self.a.copy_from_slice(&s.a);
        self.spiked.copy_from_slice(&s.spiked);
    }

    /// Adds `neuron`'s outgoing arrivals `base` steps ahead of the queue head.
    /// `skip_before` drops arrivals earlier than that offset.
    fn deliver(&mut self, neuron: usize, base: isize, skip_before: isize) {
        let layout = &self.net.layout;
        for &s in &layout.outgoing[neuron] {
            let off = base + self.comp.steps[s] as isize;
            if off < skip_before {
                continue;
            }
            let post = layout.synapses[s].post;
            self.queue.slot_mut(post, off as usize).0.i += self.net.params.weights[s];
        }
        if self.comp.dynamics.model == NeuronModel::Adex && neuron >= layout.n_in {
            let off = base + 1;
            if off >= skip_before {
                self.queue.slot_mut(neuron, off as usize).0.adapt += self.comp.dynamics.params.b;
            }
        }
    }

    /// Restores the queue as it stood at the start of step `start`, replaying
    /// the emissions of the preceding `capacity - 1` steps in their original order.
    pub fn rebuild_queue(&mut self, start: usize, inputs: &[(usize, usize)], raster: &[RasterEntry]) {
        self.queue.clear();
        let lo = start.saturating_sub(self.net.capacity - 1);
        let mut ip = inputs.partition_point(|e| e.0 < lo);
        let mut rp = raster.partition_point(|e| (e.step as usize) < lo);
        for e in lo..start {
            let base = e as isize - start as isize;
            while ip < inputs.len() && inputs[ip].0 == e {
                self.deliver(inputs[ip].1, base, 0);
                ip += 1;
            }
            while rp < raster.len() && raster[rp].step as usize == e {
                self.deliver(raster[rp].neuron as usize, base, 0);
                rp += 1;
            }
        }
    }

    /// Runs step `k`. `inputs[*cursor..]` are the pending input emissions.
    pub fn step<O: Observer>(
        &mut self,
        k: usize,
        inputs: &[(usize, usize)],
        cursor: &mut usize,
        obs: &mut O,
        trace: &mut SimTrace,
    ) -> Result<()> {
        let n_in = self.net.layout.n_in;
        let n = self.net.layout.n_neurons();
        let dynamics = &self.comp.dynamics;
        let guard = self.net.config.grad.slope_guard;
        self.fired.clear();
        for j in n_in..n {
            let jumps = self.queue.take(j);
            if self.one_spike && self.spiked[j] {
                obs.frozen(k, j);
                continue;
            }
            let s = NeuronState {
                v: self.v[j],
                i_syn: self.i[j],
                i_adapt: self.a[j],
            };
            let fire = threshold(s.v, self.spiked[j], self.one_spike);
            let (v_next, i_next, a_next, clipped) = dynamics.advance(&s, &jumps);
            if !(v_next.is_finite() && i_next.is_finite() && a_next.is_finite()) {
                return Err(Error::NonFiniteState { step: k, neuron: j });
            }
            trace.counters.clipped += clipped as usize;
            obs.neuron(k, j, &s, &jumps, fire, clipped);
            self.v[j] = if fire { V_RESET } else { v_next };
            self.i[j] = i_next;
            self.a[j] = a_next;
            if fire {
                guarded_slope(dynamics.dvdt_minus(&s), guard, &mut trace.counters);
                self.spiked[j] = true;
                self.fired.push(j);
            }
        }
        while *cursor < inputs.len() && inputs[*cursor].0 == k {
            let neuron = inputs[*cursor].1;
            obs.emit(k, neuron);
            self.deliver(neuron, 0, 0);
            *cursor += 1;
        }
        let t = k as f64 * self.net.config.dt;
        for idx in 0..self.fired.len() {
            let j = self.fired[idx];
            obs.emit(k, j);
            self.deliver(j, 0, 0);
            trace.raster.push(RasterEntry {
                neuron: j as u32,
                step: k as u32,
            });
            trace.spike_times[j].push(t);
        }
        self.queue.advance();
        obs.end_step(k);
        Ok(())
    }

    /// Whether every output neuron has fired (feed-forward early stop).
    pub fn outputs_done(&self) -> bool {
        let range = self.net.layout.output_range();
        !range.is_empty() && range.into_iter().all(|o| self.spiked[o])
    }
}

pub(crate) fn empty_trace(net: &Network, comp: &Compiled) -> SimTrace {
    SimTrace {
        steps_run: 0,
        raster: Vec::new(),
        spike_times: vec![Vec::new(); net.layout.n_neurons()],
        counters: Counters {
            clamped: comp.clamped,
            ..Counters::default()
        },
    }
}

/// Drives the kernel over the horizon; `before_step` runs ahead of each step.
pub(crate) fn drive<O: Observer>(
    kernel: &mut Kernel<'_>,
    inputs: &[(usize, usize)],
    obs: &mut O,
    mut before_step: impl FnMut(usize, &Kernel<'_>),
) -> Result<SimTrace> {
    let net = kernel.net;
    let mut trace = empty_trace(net, kernel.comp);
    let early_stop = net.config.early_stop && net.config.topology == Topology::FeedForward;
    let mut cursor = 0;
    for k in 0..net.config.n_steps {
        before_step(k, kernel);
        kernel.step(k, inputs, &mut cursor, obs, &mut trace)?;
        trace.steps_run = k + 1;
        if early_stop && kernel.outputs_done() {
            break;
        }
    }
    Ok(trace)
}

/// Forward simulation of one sample with precompiled delays.
pub fn run_compiled(net: &Network, comp: &Compiled, sample: &Sample) -> Result<SimTrace> {
    let inputs = prepare_inputs(net, sample)?;
    let mut kernel = Kernel::new(net, comp);
    drive(&mut kernel, &inputs, &mut NoObserver, |_, _| {})
}

pub fn run_forward(net: &Network, sample: &Sample) -> Result<SimTrace> {
    let comp = net.compile()?;
    run_compiled(net, &comp, sample)
}
