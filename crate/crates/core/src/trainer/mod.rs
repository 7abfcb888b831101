//! Optimization: Adam, the learning-rate schedule and magnitude pruning.

mod experiment;

pub use experiment::{
    aggregate, evaluate, load_data, median, quartiles, run_experiment, train, Evaluation, MetricsRow, RunResult,
    Split, Summary, METRICS_HEADER,
};

use crate::config::{AdamConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::network::{Network, Params};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
    pub hyper: AdamConfig,
}

impl AdamState {
    pub fn new(params: &Params, hyper: AdamConfig) -> Self {
        AdamState {
            m: Params::zeros_like(params),
            v: Params::zeros_like(params),
            step: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update. Rejects NaN gradients before touching
/// any state.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64) -> Result<()> {
    let shapes = |p: &Params| p.blocks().map(|b| b.len());
    if shapes(params) != shapes(grads) || shapes(params) != shapes(&state.m) {
        return Err(Error::InvalidInput("parameter, gradient and moment shapes differ".into()));
    }
    grads.check_finite_gradient()?;
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.hyper;
    let c1 = 1.0 - beta1.powf(state.step as f64);
    let c2 = 1.0 - beta2.powf(state.step as f64);
    let blocks = params.blocks_mut().into_iter().zip(grads.blocks());
    let moments = state.m.blocks_mut().into_iter().zip(state.v.blocks_mut());
    for ((p, g), (m, v)) in blocks.zip(moments) {
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Linear warmup to `peak`, cosine decay to `final_lr_fraction * peak` at
/// `decay_steps`, constant afterwards.
pub fn lr_schedule(step: usize, peak: f64, cfg: &TrainConfig) -> f64 {
    let floor = cfg.final_lr_fraction * peak;
    if step < cfg.warmup_steps {
        return peak * step as f64 / cfg.warmup_steps as f64;
    }
    if step >= cfg.decay_steps {
        return floor;
    }
    let frac = (step - cfg.warmup_steps) as f64 / (cfg.decay_steps - cfg.warmup_steps) as f64;
    floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Magnitude below which `ceil(sp * n)` entries fall, or `None` when nothing
/// is to be pruned.
fn magnitude_threshold(weights: &[f64], sp: f64) -> Option<f64> {
    let k = (sp.clamp(0.0, 1.0) * weights.len() as f64).ceil() as usize;
    if k == 0 {
        return None;
    }
    let mut mags: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, f64::total_cmp);
    Some(*kth)
}

/// Zeroes the weakest `sp` fraction of synaptic weights under one global
/// magnitude threshold. Entries tied with the threshold are zeroed too, so
/// the zero fraction can exceed `sp`.
pub fn prune_weights(weights: &mut [f64], sp: f64) {
    if let Some(th) = magnitude_threshold(weights, sp) {
        for w in weights.iter_mut() {
            if w.abs() <= th {
                *w = 0.0;
            }
        }
    }
}

/// Per-epoch pruning during training. Only synaptic weights are touched;
/// positions, delays and the readout are left alone, and nothing stops a
/// pruned weight from regrowing.
pub fn dynamic_prune(net: &mut Network, sp: f64) {
    prune_weights(&mut net.params.weights, sp);
}

/// One-shot pruning of a trained model.
pub fn static_prune(net: &Network, sp: f64) -> Network {
    let mut out = net.clone();
    prune_weights(&mut out.params.weights, sp);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(w: &[f64]) -> Params {
        Params {
            weights: w.to_vec(),
            ..Params::default()
        }
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = params(&[1.0, -2.0]);
        let g = params(&[0.3, -5.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr g / (|g| + eps).
        assert!((p.weights[0] - (1.0 - 0.01 * 0.3 / (0.3 + 1e-8))).abs() < 1e-15);
        assert!((p.weights[1] - (-2.0 + 0.01 * 5.0 / (5.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = params(&[1.0, -2.0]);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut p, &params(&[0.0, 0.0]), &mut st, 0.1).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut p = params(&[1.0]);
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(
            adam_step(&mut p, &params(&[f64::NAN]), &mut st, 0.1),
            Err(Error::NanGradient { block: "weights", index: 0 })
        ));
        assert_eq!(st.step, 0);
        assert_eq!(p.weights, vec![1.0]);
    }

    #[test]
    fn schedule_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, 1.0, &cfg), 0.0);
        assert!((lr_schedule(250, 1.0, &cfg) - 0.5).abs() < 1e-12);
        assert!((lr_schedule(500, 1.0, &cfg) - 1.0).abs() < 1e-12);
        assert!((lr_schedule(10_000, 1.0, &cfg) - 0.1).abs() < 1e-12);
        assert!((lr_schedule(50_000, 1.0, &cfg) - 0.1).abs() < 1e-12);
        let mid = lr_schedule(5250, 1.0, &cfg);
        assert!((mid - 0.55).abs() < 1e-12);
    }

    #[test]
    fn prune_examples() {
        let mut w = vec![1.0, -2.0, 3.0, -4.0];
        prune_weights(&mut w, 0.5);
        assert_eq!(w, vec![0.0, 0.0, 3.0, -4.0]);
        let mut w = vec![1.0, -2.0, 3.0, -4.0];
        prune_weights(&mut w, 0.0);
        assert_eq!(w, vec![1.0, -2.0, 3.0, -4.0]);
        prune_weights(&mut w, 1.0);
        assert!(w.iter().all(|x| *x == 0.0));
        let mut w = vec![1.0, 1.0, 1.0, 2.0];
        prune_weights(&mut w, 0.25);
        assert_eq!(w, vec![0.0, 0.0, 0.0, 2.0]);
    }
}
