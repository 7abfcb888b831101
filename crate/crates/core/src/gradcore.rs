//! Event-aware gradient rules.
//!
//! Spikes in transit live in per-neuron ring buffers ([`SpikeQueue`]) that
//! accumulate additive jumps for `i_syn`, `v` and `i_adapt`. The primal `v`
//! jump is always zero; its tangent carries the spike-time sensitivity of the
//! postsynaptic voltage. The functions here are the forward (tangent) rules;
//! each has an `*_adjoint` counterpart that is its exact transpose, used by the
//! reverse pass.

use serde::{Deserialize, Serialize};

use crate::neurons::Jumps;

/// Floor on voltage slopes used as divisors (voltage per ms).
pub const DEFAULT_SLOPE_GUARD: f64 = 1e-3;

/// How the voltage tangent crosses a reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetTangent {
    /// `T[v_next] = (dv+/dv-) T[v]`.
    #[default]
    EventAware,
    /// What a plain autodiff sees: the reset zeroes the tangent.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradOptions {
    pub slope_guard: f64,
    pub reset_tangent: ResetTangent,
}

impl Default for GradOptions {
    fn default() -> Self {
        GradOptions {
            slope_guard: DEFAULT_SLOPE_GUARD,
            reset_tangent: ResetTangent::EventAware,
        }
    }
}

/// Diagnostic counters collected during a simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Arrivals pulled in to the last queue slot.
    pub clamped: usize,
    /// Threshold crossings with a slope below the guard.
    pub grazing: usize,
    /// AdEx voltages clipped at the cap.
    pub clipped: usize,
}

impl Counters {
    pub fn merge(&mut self, other: &Counters) {
        self.clamped += other.clamped;
        self.grazing += other.grazing;
        self.clipped += other.clipped;
    }
}

/// Guarded slope at a threshold crossing; flags grazing crossings.
#[inline]
pub fn guarded_slope(dvdt: f64, guard: f64, counters: &mut Counters) -> f64 {
    if dvdt < guard {
        counters.grazing += 1;
        guard
    } else {
        dvdt
    }
}

/// `T[t_post] = -T[v_pre] / max(dv_pre, guard) + T[delay]`.
///
/// Input neurons have static spike times; pass `t_v_pre = None`.
pub fn spike_time_tangent(
    t_v_pre: Option<&[f64]>,
    dvdt_pre: f64,
    t_delay: &[f64],
    guard: f64,
    counters: &mut Counters,
    out: &mut [f64],
) {
    out.copy_from_slice(t_delay);
    if let Some(tv) = t_v_pre {
        let slope = guarded_slope(dvdt_pre, guard, counters);
        for (o, t) in out.iter_mut().zip(tv) {
            *o -= t / slope;
        }
    }
}

/// Reset of the membrane voltage with its custom tangent.
///
/// Returns the next voltage and writes its tangent into `t_next`.
/// `t_v` is the tangent of the pre-step voltage, `t_noreset` the tangent of
/// the no-reset update.
#[allow(clippy::too_many_arguments)]
pub fn v_reset(
    spiked: bool,
    dvdt_minus: f64,
    dvdt_plus: f64,
    v_noreset: f64,
    t_v: &[f64],
    t_noreset: &[f64],
    opts: &GradOptions,
    counters: &mut Counters,
    t_next: &mut [f64],
) -> f64 {
    if !spiked {
        t_next.copy_from_slice(t_noreset);
        return v_noreset;
    }
    match opts.reset_tangent {
        ResetTangent::EventAware => {
            let ratio = dvdt_plus / guarded_slope(dvdt_minus, opts.slope_guard, counters);
            for (o, t) in t_next.iter_mut().zip(t_v) {
                *o = ratio * t;
            }
        }
        ResetTangent::Zero => t_next.iter_mut().for_each(|o| *o = 0.0),
    }
    crate::neurons::V_RESET
}

/// Reset ratio used by both tangent and adjoint passes (guard already applied).
#[inline]
pub fn reset_ratio(opts: &GradOptions, dvdt_plus: f64, guarded_minus: f64) -> f64 {
    match opts.reset_tangent {
        ResetTangent::EventAware => dvdt_plus / guarded_minus,
        ResetTangent::Zero => 0.0,
    }
}

/// Tangent contributions of one delivered spike, per unit of `T[t_post]`:
/// `T[i_jump] = T[w] + (w / tau_syn) T[t_post]`, `T[v_jump] = -w T[t_post]`.
#[inline]
pub fn jump_time_coeffs(w: f64, tau_syn: f64) -> (f64, f64) {
    (w / tau_syn, -w)
}

/// Adjoint of a delivered spike: returns `(dL/dw, dL/dt_post)` given the
/// adjoints of the current and voltage jumps at the arrival slot.
#[inline]
pub fn jump_adjoint(w: f64, tau_syn: f64, adj_i: f64, adj_v: f64) -> (f64, f64) {
    let (ci, cv) = jump_time_coeffs(w, tau_syn);
    (adj_i, ci * adj_i + cv * adj_v)
}

/// Flat ring buffer of per-neuron jump slots sharing one head.
///
/// Slot `k` of neuron `n` holds everything arriving `k` steps after the
/// current step. Capacity is fixed for a run.
#[derive(Debug, Clone)]
pub struct SpikeQueue<T> {
    capacity: usize,
    n_neurons: usize,
    head: usize,
    slots: Vec<T>,
}

impl<T: Default + Clone> SpikeQueue<T> {
    pub fn new(n_neurons: usize, capacity: usize) -> Self {
        assert!(capacity >= 2, "queue capacity must be at least 2");
        SpikeQueue {
            capacity,
            n_neurons,
            head: 0,
            slots: vec![T::default(); n_neurons * capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn clear(&mut self) {
        self.head = 0;
        self.slots.iter_mut().for_each(|s| *s = T::default());
    }

    #[inline]
    fn index(&self, neuron: usize, offset: usize) -> usize {
        neuron * self.capacity + (self.head + offset) % self.capacity
    }

    /// Slot `offset` steps ahead of the head. Offsets at or beyond the
    /// capacity land in the last slot and are reported as clamped.
    #[inline]
    pub fn slot_mut(&mut self, neuron: usize, offset: usize) -> (&mut T, bool) {
        let clamped = offset >= self.capacity;
        let offset = offset.min(self.capacity - 1);
        let idx = self.index(neuron, offset);
        (&mut self.slots[idx], clamped)
    }

    #[inline]
    pub fn peek(&self, neuron: usize, offset: usize) -> &T {
        &self.slots[self.index(neuron, offset)]
    }

    /// Takes the head slot of `neuron`, leaving it cleared.
    #[inline]
    pub fn take(&mut self, neuron: usize) -> T {
        let idx = self.index(neuron, 0);
        std::mem::take(&mut self.slots[idx])
    }

    /// Moves every neuron's head one step forward.
    #[inline]
    pub fn advance(&mut self) {
        self.head = (self.head + 1) % self.capacity;
    }
}

impl SpikeQueue<Jumps> {
    /// Takes the current jumps of `neuron`; the head moves only on [`advance`](Self::advance).
    pub fn dequeue_jumps(&mut self, neuron: usize) -> Jumps {
        self.take(neuron)
    }
}

/// Jump slot carrying tangents for `n_dirs` directions.
///
/// The tangent block is allocated lazily so silent slots cost nothing.
#[derive(Debug, Clone, Default)]
pub struct TangentSlot {
    pub primal: Jumps,
    /// `[T[i]; T[v]; T[adapt]]`, each `n_dirs` long.
    pub tangent: Option<Box<[f64]>>,
}

impl TangentSlot {
    fn tangent_mut(&mut self, n_dirs: usize) -> &mut [f64] {
        self.tangent
            .get_or_insert_with(|| vec![0.0; 3 * n_dirs].into_boxed_slice())
    }
}

/// Where a spike's tangent contributions come from.
pub struct SpikeTangent<'a> {
    /// `T[w]` as sparse `(direction, value)` pairs.
    pub t_weight: &'a [(usize, f64)],
    /// `T[t_post]`, dense.
    pub t_post: &'a [f64],
}

/// Adds one spike's primal and tangent jumps to `target`'s slot `offset` ahead.
///
/// Returns `true` when the arrival had to be clamped into the last slot.
pub fn enqueue_spike(
    queue: &mut SpikeQueue<TangentSlot>,
    target: usize,
    offset: usize,
    w: f64,
    tau_syn: f64,
    tangent: &SpikeTangent<'_>,
) -> bool {
    let n = tangent.t_post.len();
    let (slot, clamped) = queue.slot_mut(target, offset);
    slot.primal.i += w;
    let (ci, cv) = jump_time_coeffs(w, tau_syn);
    let t = slot.tangent_mut(n);
    let (ti, rest) = t.split_at_mut(n);
    let tv = &mut rest[..n];
    for (k, &tp) in tangent.t_post.iter().enumerate() {
        ti[k] += ci * tp;
        tv[k] += cv * tp;
    }
    for &(k, x) in tangent.t_weight {
        ti[k] += x;
    }
    clamped
}

/// Spike-triggered adaptation on the emitting neuron: `i_adapt += b` with
/// tangent `coeff * T[t_pre]`.
pub fn enqueue_adaptation(
    queue: &mut SpikeQueue<TangentSlot>,
    neuron: usize,
    b: f64,
    coeff: f64,
    t_pre: &[f64],
) {
    let n = t_pre.len();
    let (slot, _) = queue.slot_mut(neuron, 1);
    slot.primal.adapt += b;
    let t = slot.tangent_mut(n);
    for (o, tp) in t[2 * n..].iter_mut().zip(t_pre) {
        *o += coeff * tp;
    }
}

/// Dequeues `neuron`'s current slot into primal jumps and dense tangents
/// (`t_out` is `3 * n_dirs` long and is overwritten).
pub fn dequeue_jumps(queue: &mut SpikeQueue<TangentSlot>, neuron: usize, t_out: &mut [f64]) -> Jumps {
    let slot = queue.take(neuron);
    match slot.tangent {
        Some(t) => t_out.copy_from_slice(&t),
        None => t_out.iter_mut().for_each(|x| *x = 0.0),
    }
    slot.primal
}
