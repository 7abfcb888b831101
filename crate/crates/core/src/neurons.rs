//! Discretized LIF and AdEx updates.
//!
//! Time is in milliseconds, voltages are dimensionless with threshold 1 and
//! reset 0, and currents are in voltage per millisecond. LIF uses exact
//! exponential decay for the leak and the synaptic current with an Euler
//! current-to-voltage coupling; AdEx is integrated with forward Euler.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const V_THRESHOLD: f64 = 1.0;
pub const V_RESET: f64 = 0.0;
/// AdEx voltages are clipped to this magnitude.
pub const ADEX_V_CAP: f64 = 1e3;
/// Largest exponent fed to `exp` in the AdEx upswing.
pub const ADEX_MAX_EXPONENT: f64 = 20.0;
/// AdEx soft threshold; the exponential term is `delta_t` here.
pub const ADEX_V_RHEOBASE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronModel {
    Lif,
    Adex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronParams {
    pub tau_mem: f64,
    pub tau_syn: f64,
    pub tau_adapt: f64,
    /// Subthreshold adaptation coupling (1/ms).
    pub a: f64,
    /// Spike-triggered adaptation increment.
    pub b: f64,
    pub delta_t: f64,
    /// Constant input current added to every non-input neuron.
    pub bias_current: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            tau_mem: 20.0,
            tau_syn: 5.0,
            tau_adapt: 100.0,
            a: 0.01,
            b: 0.02,
            delta_t: 0.1,
            bias_current: 0.0,
        }
    }
}

impl NeuronParams {
    /// Time constants scaled to an input window: `tau_syn = window / 8`, `tau_mem = 2 tau_syn`.
    pub fn for_window(window: f64) -> Self {
        let tau_syn = window / 8.0;
        NeuronParams {
            tau_syn,
            tau_mem: 2.0 * tau_syn,
            tau_adapt: 4.0 * window,
            ..NeuronParams::default()
        }
    }

    pub fn validate(&self, model: NeuronModel) -> Result<()> {
        for (name, tau) in [
            ("tau_mem", self.tau_mem),
            ("tau_syn", self.tau_syn),
            ("tau_adapt", self.tau_adapt),
        ] {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {tau}"
                )));
            }
        }
        if model == NeuronModel::Adex && !(self.delta_t > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "delta_t must be positive for AdEx, got {}",
                self.delta_t
            )));
        }
        if !self.bias_current.is_finite() || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidConfig("non-finite neuron constant".into()));
        }
        Ok(())
    }
}

/// Which voltage slope is used on the post-reset side of the reset ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlusSlope {
    /// Right-hand side evaluated at the reset state (leak term at v = 0).
    #[default]
    PostReset,
    /// Pre-reset slope plus the arriving current jump.
    SharedLeak,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeuronState {
    pub v: f64,
    pub i_syn: f64,
    pub i_adapt: f64,
}

/// Additive contributions of arriving spikes for one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jumps {
    pub i: f64,
    pub v: f64,
    pub adapt: f64,
}

impl Jumps {
    #[inline]
    pub fn add(&mut self, other: &Jumps) {
        self.i += other.i;
        self.v += other.v;
        self.adapt += other.adapt;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepResult {
    pub v_noreset: f64,
    pub i_next: f64,
    pub i_adapt_next: f64,
    pub dvdt_minus: f64,
    pub dvdt_plus: f64,
    /// AdEx voltage hit [`ADEX_V_CAP`].
    pub clipped: bool,
}

/// Partial derivatives of the no-reset update, used for tangent transport.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepJacobian {
    pub dv_dv: f64,
    pub dv_di: f64,
    pub dv_da: f64,
    pub di_di: f64,
    pub da_da: f64,
    pub da_dv: f64,
}

/// Neuron constants bound to a timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    pub model: NeuronModel,
    pub params: NeuronParams,
    pub dt: f64,
    pub plus_slope: PlusSlope,
    decay_mem: f64,
    decay_syn: f64,
}

impl Dynamics {
    pub fn new(model: NeuronModel, params: NeuronParams, dt: f64) -> Result<Self> {
        params.validate(model)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        Ok(Dynamics {
            model,
            params,
            dt,
            plus_slope: PlusSlope::default(),
            decay_mem: (-dt / params.tau_mem).exp(),
            decay_syn: (-dt / params.tau_syn).exp(),
        })
    }

    pub fn with_plus_slope(mut self, plus_slope: PlusSlope) -> Self {
        self.plus_slope = plus_slope;
        self
    }

    pub fn decay_syn(&self) -> f64 {
        self.decay_syn
    }

    /// AdEx voltage right-hand side and its derivative in `v`.
    #[inline]
    fn adex_rhs(&self, v: f64, i_syn: f64, i_adapt: f64) -> (f64, f64) {
        let p = &self.params;
        let u = (v - ADEX_V_RHEOBASE) / p.delta_t;
        let (ex, dex) = if u > ADEX_MAX_EXPONENT {
            (ADEX_MAX_EXPONENT.exp(), 0.0)
        } else {
            let e = u.exp();
            (e, e)
        };
        let rhs = (-v + p.delta_t * ex) / p.tau_mem + i_syn + p.bias_current - i_adapt;
        (rhs, (-1.0 + dex) / p.tau_mem)
    }

    /// Voltage slope just before a threshold crossing.
    #[inline]
    pub fn dvdt_minus(&self, s: &NeuronState) -> f64 {
        match self.model {
            NeuronModel::Lif => s.i_syn + self.params.bias_current - s.v / self.params.tau_mem,
            NeuronModel::Adex => self.adex_rhs(s.v, s.i_syn, s.i_adapt).0,
        }
    }

    /// Voltage slope just after a reset, given the jumps arriving in the same step.
    #[inline]
    pub fn dvdt_plus(&self, s: &NeuronState, jumps: &Jumps) -> f64 {
        match self.plus_slope {
            PlusSlope::SharedLeak => self.dvdt_minus(s) + jumps.i,
            PlusSlope::PostReset => match self.model {
                NeuronModel::Lif => {
                    s.i_syn + jumps.i + self.params.bias_current - V_RESET / self.params.tau_mem
                }
                NeuronModel::Adex => {
                    self.adex_rhs(
                        V_RESET,
                        s.i_syn + jumps.i,
                        s.i_adapt + jumps.adapt + self.params.b,
                    )
                    .0
                }
            },
        }
    }

    /// One step without reset. Returns the no-reset voltage and the next currents.
    #[inline]
    pub fn advance(&self, s: &NeuronState, jumps: &Jumps) -> (f64, f64, f64, bool) {
        let p = &self.params;
        let i_next = self.decay_syn * s.i_syn + jumps.i;
        match self.model {
            NeuronModel::Lif => {
                let v = self.decay_mem * s.v + (s.i_syn + p.bias_current) * self.dt + jumps.v;
                (v, i_next, s.i_adapt, false)
            }
            NeuronModel::Adex => {
                let (rhs, _) = self.adex_rhs(s.v, s.i_syn, s.i_adapt);
                let mut v = s.v + self.dt * rhs + jumps.v;
                let clipped = !(v.abs() <= ADEX_V_CAP);
                if clipped {
                    v = if v.is_nan() { ADEX_V_CAP } else { v.clamp(-ADEX_V_CAP, ADEX_V_CAP) };
                }
                let a = s.i_adapt + self.dt * (-s.i_adapt + p.a * s.v) / p.tau_adapt + jumps.adapt;
                (v, i_next, a, clipped)
            }
        }
    }

    /// Full step: no-reset state plus the slopes the reset rule needs.
    pub fn step(&self, s: &NeuronState, jumps: &Jumps) -> StepResult {
        let (v_noreset, i_next, i_adapt_next, clipped) = self.advance(s, jumps);
        StepResult {
            v_noreset,
            i_next,
            i_adapt_next,
            dvdt_minus: self.dvdt_minus(s),
            dvdt_plus: self.dvdt_plus(s, jumps),
            clipped,
        }
    }

    #[inline]
    pub fn jacobian(&self, s: &NeuronState, clipped: bool) -> StepJacobian {
        let p = &self.params;
        match self.model {
            NeuronModel::Lif => StepJacobian {
                dv_dv: self.decay_mem,
                dv_di: self.dt,
                dv_da: 0.0,
                di_di: self.decay_syn,
                da_da: 1.0,
                da_dv: 0.0,
            },
            NeuronModel::Adex => {
                let (_, drhs) = self.adex_rhs(s.v, s.i_syn, s.i_adapt);
                let (dv_dv, dv_di, dv_da) = if clipped {
                    (0.0, 0.0, 0.0)
                } else {
                    (1.0 + self.dt * drhs, self.dt, -self.dt)
                };
                StepJacobian {
                    dv_dv,
                    dv_di,
                    dv_da,
                    di_di: self.decay_syn,
                    da_da: 1.0 - self.dt / p.tau_adapt,
                    da_dv: self.dt * p.a / p.tau_adapt,
                }
            }
        }
    }

    /// Tangent coefficient of the spike-triggered adaptation jump with respect
    /// to the emitting neuron's spike time.
    ///
    /// Adaptation slope drops by `(b + a * V_THRESHOLD) / tau_adapt` across a
    /// spike: `b` from the increment and `a` from the voltage reset.
    pub fn adapt_jump_time_coeff(&self) -> f64 {
        match self.model {
            NeuronModel::Lif => 0.0,
            NeuronModel::Adex => {
                (self.params.b + self.params.a * (V_THRESHOLD - V_RESET)) / self.params.tau_adapt
            }
        }
    }
}

/// `S = 1` iff `v >= 1` and, in one-spike mode, the neuron has not fired yet.
#[inline]
pub fn threshold(v: f64, has_spiked: bool, one_spike: bool) -> bool {
    v >= V_THRESHOLD && !(one_spike && has_spiked)
}
