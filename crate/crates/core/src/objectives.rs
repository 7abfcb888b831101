//! Losses over simulated spike trains.
//!
//! Every loss reports its value together with the adjoints the gradient
//! engines consume: `dL/dt` for each recorded spike, `dL/ds` for each
//! neuron's spike count (surrogate path), and the readout-weight gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Layout;

/// Numerically stable `log(1 + e^z)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Heaviside primal and fast-sigmoid surrogate derivative `1 / (|x| + 1)^2`.
#[inline]
pub fn superspike(x: f64) -> (f64, f64) {
    let primal = if x >= 0.0 { 1.0 } else { 0.0 };
    let d = 1.0 / (x.abs() + 1.0);
    (primal, d * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TtfsLoss {
    /// Slope (1/ms).
    pub beta: f64,
    /// Margin (ms).
    pub margin: f64,
    /// Weight (1/ms) of an extra `early * t_correct` term that pulls the
    /// correct output forward. Zero gives the plain hinge.
    pub early: f64,
}

impl Default for TtfsLoss {
    fn default() -> Self {
        TtfsLoss {
            beta: 1.0,
            margin: 1.0,
            early: 0.0,
        }
    }
}

impl TtfsLoss {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !(self.margin >= 0.0) || !(self.early >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "hinge loss needs beta > 0, margin >= 0 and early >= 0, got {}, {} and {}",
                self.beta, self.margin, self.early
            )));
        }
        Ok(())
    }
}

/// `sum_{k != correct} softplus(beta (t_correct - t_k + m)) + early t_correct`
/// and its gradient with respect to every time.
pub fn ttfs_hinge(times: &[f64], correct: usize, loss: &TtfsLoss) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; times.len()];
    grad[correct] = loss.early;
    let mut value = loss.early * times[correct];
    for (k, &tk) in times.iter().enumerate() {
        if k == correct {
            continue;
        }
        let z = loss.beta * (times[correct] - tk + loss.margin);
        value += softplus(z);
        let g = loss.beta * sigmoid(z);
        grad[correct] += g;
        grad[k] -= g;
    }
    (value, grad)
}

/// Softmax cross-entropy of `W s` against `label`.
///
/// Returns the loss, `dL/ds` and `dL/dW` (row-major `n_out x n_hidden`).
pub fn readout_ce(counts: &[f64], w: &[f64], label: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let n_h = counts.len();
    let n_out = w.len() / n_h.max(1);
    let logits = readout_logits(counts, w, n_out);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_z = max + sum.ln();
    let value = log_z - logits[label];
    let mut d_counts = vec![0.0; n_h];
    let mut d_w = vec![0.0; w.len()];
    for o in 0..n_out {
        let p = (logits[o] - log_z).exp();
        let g = p - if o == label { 1.0 } else { 0.0 };
        let row = &w[o * n_h..(o + 1) * n_h];
        for h in 0..n_h {
            d_counts[h] += g * row[h];
            d_w[o * n_h + h] = g * counts[h];
        }
    }
    (value, d_counts, d_w)
}

pub fn readout_logits(counts: &[f64], w: &[f64], n_out: usize) -> Vec<f64> {
    let n_h = counts.len();
    (0..n_out)
        .map(|o| {
            w[o * n_h..(o + 1) * n_h]
                .iter()
                .zip(counts)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `c * t` for the `index`-th spike of `neuron`; a missing spike counts as the
/// horizon with zero gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeTerm {
    pub neuron: usize,
    pub index: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Hinge loss on first output spike times.
    Ttfs(TtfsLoss),
    /// Cross-entropy on the linear readout of hidden spike counts.
    Readout,
    /// Weighted sum of selected spike times.
    SpikeTimes(Vec<SpikeTerm>),
}

/// Loss value and adjoints for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    /// `dL/dt` per neuron and spike, same shape as the spike times.
    pub time_adj: Vec<Vec<f64>>,
    /// `dL/ds` per neuron (spike count).
    pub count_adj: Vec<f64>,
    pub readout: Vec<f64>,
}

/// First spike time of every output neuron, or the horizon when silent.
pub fn output_times(spikes: &[Vec<f64>], layout: &Layout, horizon: f64) -> Vec<f64> {
    layout
        .output_range()
        .map(|n| spikes[n].first().copied().unwrap_or(horizon))
        .collect()
}

pub fn hidden_counts(spikes: &[Vec<f64>], layout: &Layout) -> Vec<f64> {
    layout.hidden_range().map(|n| spikes[n].len() as f64).collect()
}

impl Objective {
    pub fn evaluate(
        &self,
        spikes: &[Vec<f64>],
        horizon: f64,
        layout: &Layout,
        readout: &[f64],
        label: usize,
    ) -> LossGrad {
        let mut out = LossGrad {
            value: 0.0,
            time_adj: spikes.iter().map(|s| vec![0.0; s.len()]).collect(),
            count_adj: vec![0.0; spikes.len()],
            readout: vec![0.0; readout.len()],
        };
        match self {
            Objective::Ttfs(loss) => {
                let times = output_times(spikes, layout, horizon);
                let (value, grad) = ttfs_hinge(&times, label, loss);
                out.value = value;
                for (k, n) in layout.output_range().enumerate() {
                    if let Some(a) = out.time_adj[n].first_mut() {
                        *a = grad[k];
                    }
                }
            }
            Objective::Readout => {
                let counts = hidden_counts(spikes, layout);
                let (value, d_counts, d_w) = readout_ce(&counts, readout, label);
                out.value = value;
                for (k, n) in layout.hidden_range().enumerate() {
                    out.count_adj[n] = d_counts[k];
                }
                out.readout = d_w;
            }
            Objective::SpikeTimes(terms) => {
                for t in terms {
                    match spikes[t.neuron].get(t.index) {
                        Some(&time) => {
                            out.value += t.coeff * time;
                            out.time_adj[t.neuron][t.index] += t.coeff;
                        }
                        None => out.value += t.coeff * horizon,
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_at_margin_is_log_two() {
        let (v, _) = ttfs_hinge(&[4.0, 5.0], 0, &TtfsLoss::default());
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn hinge_vanishes_for_early_correct_spike() {
        let (v, _) = ttfs_hinge(&[0.0, 900.0, 800.0], 0, &TtfsLoss::default());
        assert!(v >= 0.0 && v < 1e-300);
    }

    #[test]
    fn hinge_gradient_matches_finite_differences() {
        let loss = TtfsLoss {
            beta: 1.3,
            margin: 0.7,
            early: 0.2,
        };
        let times = [3.0, 2.5, 4.1];
        let (_, g) = ttfs_hinge(&times, 0, &loss);
        assert!(g[0] > 0.0);
        let h = 1e-6;
        for k in 0..3 {
            let mut p = times;
            let mut m = times;
            p[k] += h;
            m[k] -= h;
            let fd = (ttfs_hinge(&p, 0, &loss).0 - ttfs_hinge(&m, 0, &loss).0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn early_term_adds_linearly() {
        let plain = TtfsLoss::default();
        let pulled = TtfsLoss {
            early: 0.1,
            ..plain
        };
        let times = [3.0, 2.5, 4.1];
        let (a, ga) = ttfs_hinge(&times, 0, &plain);
        let (b, gb) = ttfs_hinge(&times, 0, &pulled);
        assert!((b - a - 0.3).abs() < 1e-12);
        assert!((gb[0] - ga[0] - 0.1).abs() < 1e-12);
        assert_eq!(ga[1..], gb[1..]);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn superspike_values() {
        assert_eq!(superspike(0.0), (1.0, 1.0));
        assert_eq!(superspike(1.0).1, 0.25);
        let (p, d) = superspike(-0.5);
        assert_eq!(p, 0.0);
        assert!((d - 1.0 / 2.25).abs() < 1e-15);
    }

    #[test]
    fn zero_readout_gives_log_classes() {
        let (v, _, _) = readout_ce(&[1.0, 2.0], &[0.0; 6], 1);
        assert!((v - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn dominant_logit_gives_zero_loss() {
        let (v, _, _) = readout_ce(&[1.0], &[1e4, 0.0], 0);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn readout_gradient_matches_finite_differences() {
        let counts = [2.0, 0.0, 5.0, 1.0];
        let w: Vec<f64> = (0..12).map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.13).collect();
        let (_, dc, dw) = readout_ce(&counts, &w, 2);
        let h = 1e-6;
        for k in 0..w.len() {
            let mut p = w.clone();
            let mut m = w.clone();
            p[k] += h;
            m[k] -= h;
            let fd = (readout_ce(&counts, &p, 2).0 - readout_ce(&counts, &m, 2).0) / (2.0 * h);
            assert!((fd - dw[k]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
        for k in 0..counts.len() {
            let mut p = counts;
            let mut m = counts;
            p[k] += h;
            m[k] -= h;
            let fd = (readout_ce(&p, &w, 2).0 - readout_ce(&m, &w, 2).0) / (2.0 * h);
            assert!((fd - dc[k]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, -3.0, 700.0, 2.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
