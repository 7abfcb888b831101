//! Continuous-time reference simulation.
//!
//! Integrates the neuron ODEs with RK4 between events, locates threshold
//! crossings by bisection and delivers spikes at their exact continuous
//! arrival times. Spike times are smooth functions of the parameters between
//! spike-count changes, which makes this the finite-difference oracle for the
//! time-stepped engines.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::neurons::{Dynamics, NeuronModel, NeuronState, V_RESET, V_THRESHOLD};
use crate::simulator::Sample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    /// Longest RK4 step (ms).
    pub max_substep: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions { max_substep: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrace {
    pub spike_times: Vec<Vec<f64>>,
    /// Smallest voltage slope seen at a crossing.
    pub min_crossing_slope: f64,
}

#[derive(Debug, Clone, Copy)]
struct Arrival {
    time: f64,
    seq: usize,
    target: usize,
    weight: f64,
}

impl PartialEq for Arrival {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Arrival {}
impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Arrival {
    // Reversed so the max-heap pops the earliest arrival first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn rhs(d: &Dynamics, s: &NeuronState) -> NeuronState {
    let p = &d.params;
    NeuronState {
        v: d.dvdt_minus(s),
        i_syn: -s.i_syn / p.tau_syn,
        i_adapt: match d.model {
            NeuronModel::Lif => 0.0,
            NeuronModel::Adex => (-s.i_adapt + p.a * s.v) / p.tau_adapt,
        },
    }
}

fn axpy(s: &NeuronState, h: f64, k: &NeuronState) -> NeuronState {
    NeuronState {
        v: s.v + h * k.v,
        i_syn: s.i_syn + h * k.i_syn,
        i_adapt: s.i_adapt + h * k.i_adapt,
    }
}

fn rk4(d: &Dynamics, s: &NeuronState, h: f64) -> NeuronState {
    let k1 = rhs(d, s);
    let k2 = rhs(d, &axpy(s, 0.5 * h, &k1));
    let k3 = rhs(d, &axpy(s, 0.5 * h, &k2));
    let k4 = rhs(d, &axpy(s, h, &k3));
    NeuronState {
        v: s.v + h / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v),
        i_syn: s.i_syn + h / 6.0 * (k1.i_syn + 2.0 * k2.i_syn + 2.0 * k3.i_syn + k4.i_syn),
        i_adapt: s.i_adapt + h / 6.0 * (k1.i_adapt + 2.0 * k2.i_adapt + 2.0 * k3.i_adapt + k4.i_adapt),
    }
}

/// Time within `(0, h]` at which the RK4 flow from `s` reaches threshold.
fn crossing(d: &Dynamics, s: &NeuronState, h: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if rk4(d, s, mid).v >= V_THRESHOLD {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * h.max(1.0) {
            break;
        }
    }
    hi
}

pub fn simulate(net: &Network, sample: &Sample, opts: &ReferenceOptions) -> Result<ReferenceTrace> {
    if !(opts.max_substep > 0.0) {
        return Err(Error::InvalidConfig("max_substep must be positive".into()));
    }
    let d = net.config.dynamics()?;
    let layout = &net.layout;
    let n = layout.n_neurons();
    let n_in = layout.n_in;
    let horizon = net.config.horizon();
    let one_spike = net.config.one_spike();
    let delays = net.synapse_delays();
    let weights = &net.params.weights;

    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let mut push = |heap: &mut BinaryHeap<Arrival>, neuron: usize, t: f64| {
        for &s in &layout.outgoing[neuron] {
            heap.push(Arrival {
                time: t + delays[s],
                seq,
                target: layout.synapses[s].post,
                weight: weights[s],
            });
            seq += 1;
        }
    };
    for sp in &sample.inputs {
        if sp.neuron >= n_in || !(sp.time >= 0.0 && sp.time.is_finite()) {
            return Err(Error::InvalidInput(format!("bad input spike {sp:?}")));
        }
        if sp.time < horizon {
            push(&mut heap, sp.neuron, sp.time);
        }
    }

    let mut state = vec![NeuronState::default(); n];
    let mut done = vec![false; n];
    let mut spikes = vec![Vec::new(); n];
    let mut min_slope = f64::INFINITY;
    let mut t = 0.0;
    while t < horizon {
        while let Some(a) = heap.peek() {
            if a.time > t {
                break;
            }
            state[a.target].i_syn += a.weight;
            heap.pop();
        }
        let next_event = heap.peek().map_or(f64::INFINITY, |a| a.time);
        let h = (next_event.min(horizon) - t).min(opts.max_substep);
        let mut first: Option<(usize, f64)> = None;
        for j in n_in..n {
            if done[j] {
                continue;
            }
            let s = &state[j];
            let theta = if s.v >= V_THRESHOLD {
                0.0
            } else if rk4(&d, s, h).v >= V_THRESHOLD {
                crossing(&d, s, h)
            } else {
                continue;
            };
            if first.is_none_or(|(_, best)| theta < best) {
                first = Some((j, theta));
            }
        }
        let step = first.map_or(h, |(_, theta)| theta);
        if step > 0.0 {
            for j in n_in..n {
                if !done[j] {
                    state[j] = rk4(&d, &state[j], step);
                }
            }
        }
        t += step;
        if let Some((j, _)) = first {
            if t >= horizon {
                break;
            }
            min_slope = min_slope.min(d.dvdt_minus(&state[j]));
            spikes[j].push(t);
            state[j].v = V_RESET;
            if d.model == NeuronModel::Adex {
                state[j].i_adapt += d.params.b;
            }
            if one_spike {
                done[j] = true;
            }
            push(&mut heap, j, t);
        }
        if state.iter().any(|s| !s.v.is_finite()) {
            return Err(Error::InvalidInput("reference simulation diverged".into()));
        }
    }
    Ok(ReferenceTrace {
        spike_times: spikes,
        min_crossing_slope: min_slope,
    })
}
