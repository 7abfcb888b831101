use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{adam_step, dynamic_prune, lr_schedule, static_prune, AdamState};
use crate::config::{DataSource, RunConfig, SparsityMode};
use crate::datasets::yinyang::encode_all;
use crate::datasets::{generate_yinyang, read_spike_file};
use crate::error::{Error, Result};
use crate::network::{Network, Params};
use crate::objectives::Objective;
use crate::simulator::{classify, run_compiled, run_with_gradients, Sample};

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,lr,sparsity,param_count,clamp_count,silent_count";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    /// Test set after one-shot pruning of the final model.
    TestStatic,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::TestStatic => "test_static",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub sparsity: f64,
    pub param_count: usize,
    pub clamp_count: usize,
    pub silent_count: usize,
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            self.loss,
            self.accuracy,
            self.lr,
            self.sparsity,
            self.param_count,
            self.clamp_count,
            self.silent_count
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub silent: usize,
    pub clamped: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub network: Network,
    pub history: Vec<MetricsRow>,
    pub test: Evaluation,
    /// Final model pruned once after training (static sparsity only).
    pub static_test: Option<Evaluation>,
    /// Peak learning rate actually used (halved after a divergence).
    pub lr: f64,
}

/// Mean loss and accuracy over `samples`. Samples run in parallel; the
/// reduction is sequential, so the result does not depend on thread count.
pub fn evaluate(net: &Network, samples: &[Sample], objective: &Objective) -> Result<Evaluation> {
    if samples.is_empty() {
        return Ok(Evaluation::default());
    }
    let comp = net.compile()?;
    let horizon = net.config.horizon();
    let per: Vec<(f64, bool, bool)> = samples
        .par_iter()
        .map(|s| {
            let tr = run_compiled(net, &comp, s)?;
            let loss = objective
                .evaluate(&tr.spike_times, horizon, &net.layout, &net.params.readout, s.label)
                .value;
            let (class, silent) = classify(&tr, net);
            Ok((loss, class == s.label, silent))
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    Ok(Evaluation {
        loss: per.iter().map(|p| p.0).sum::<f64>() / n,
        accuracy: per.iter().filter(|p| p.1).count() as f64 / n,
        silent: per.iter().filter(|p| p.2).count(),
        clamped: comp.clamped,
    })
}

pub fn load_data(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let d = &cfg.data;
    match d.source {
        DataSource::YinYang => Ok((
            encode_all(&generate_yinyang(d.train_size, d.train_seed), d.window),
            encode_all(&generate_yinyang(d.test_size, d.test_seed), d.window),
        )),
        DataSource::SpikeFile => {
            let load = |p: &Option<std::path::PathBuf>| -> Result<Vec<Sample>> {
                let path = p.as_ref().ok_or_else(|| Error::InvalidConfig("missing data path".into()))?;
                let data = read_spike_file(path)?;
                if data.n_neurons as usize > cfg.network.n_in || data.n_classes as usize > cfg.network.n_out {
                    return Err(Error::InvalidConfig(format!(
                        "{} has {} neurons and {} classes, network has {} inputs and {} outputs",
                        path.display(),
                        data.n_neurons,
                        data.n_classes,
                        cfg.network.n_in,
                        cfg.network.n_out
                    )));
                }
                Ok(data.samples)
            };
            Ok((load(&d.train_path)?, load(&d.test_path)?))
        }
    }
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFiniteState { .. } | Error::NanGradient { .. })
}

/// Summed gradient and loss of one batch, reduced in sample order.
fn batch_gradient(net: &Network, batch: &[&Sample], objective: &Objective) -> Result<(Params, f64, usize, usize, usize)> {
    let comp = net.compile()?;
    let results: Vec<_> = batch
        .par_iter()
        .map(|s| {
            let r = run_with_gradients(net, &comp, s, objective)?;
            let (class, silent) = classify(&r.trace, net);
            Ok((r.grad, r.loss, class == s.label, silent))
        })
        .collect::<Result<_>>()?;
    let mut grad = Params::zeros_like(&net.params);
    let (mut loss, mut correct, mut silent) = (0.0, 0, 0);
    for (g, l, c, s) in &results {
        grad.add_assign(g);
        loss += l;
        correct += *c as usize;
        silent += *s as usize;
    }
    Ok((grad, loss, correct, silent, comp.clamped))
}

fn train_once(
    cfg: &RunConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    seed: u64,
    lr: f64,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<RunResult> {
    let objective = cfg.objective();
    let t = &cfg.train;
    let mut net = Network::init(cfg.network.clone(), seed)?;
    let mut adam = AdamState::new(&net.params, t.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5a3b1e5);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(2 * t.epochs + 1);
    let mut step = 0;
    let mut test = Evaluation::default();
    for epoch in 0..t.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut correct, mut silent, mut clamped) = (0.0, 0, 0, 0);
        let mut rate = lr_schedule(step, lr, t);
        for chunk in order.chunks(t.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&k| &train_set[k]).collect();
            let (mut grad, l, c, s, cl) = batch_gradient(&net, &batch, &objective)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteState { step, neuron: 0 });
            }
            grad.scale(1.0 / batch.len() as f64);
            step += 1;
            rate = lr_schedule(step, lr, t);
            adam_step(&mut net.params, &grad, &mut adam, rate)?;
            net.project();
            loss += l;
            correct += c;
            silent += s;
            clamped += cl;
        }
        if cfg.sparsity.mode == SparsityMode::Dynamic {
            dynamic_prune(&mut net, cfg.sparsity.sp);
        }
        let n = train_set.len().max(1) as f64;
        let row = |split, loss, accuracy, clamp_count, silent_count| MetricsRow {
            epoch,
            split,
            loss,
            accuracy,
            lr: rate,
            sparsity: net.sparsity(),
            param_count: net.effective_param_count(),
            clamp_count,
            silent_count,
        };
        let train_row = row(Split::Train, loss / n, correct as f64 / n, clamped, silent);
        test = evaluate(&net, test_set, &objective)?;
        let test_row = row(Split::Test, test.loss, test.accuracy, test.clamped, test.silent);
        for r in [train_row, test_row] {
            on_row(&r);
            history.push(r);
        }
    }
    let static_test = if cfg.sparsity.mode == SparsityMode::Static {
        let pruned = static_prune(&net, cfg.sparsity.sp);
        let e = evaluate(&pruned, test_set, &objective)?;
        let r = MetricsRow {
            epoch: t.epochs,
            split: Split::TestStatic,
            loss: e.loss,
            accuracy: e.accuracy,
            lr: 0.0,
            sparsity: pruned.sparsity(),
            param_count: pruned.effective_param_count(),
            clamp_count: e.clamped,
            silent_count: e.silent,
        };
        on_row(&r);
        history.push(r);
        Some(e)
    } else {
        None
    };
    Ok(RunResult {
        network: net,
        history,
        test,
        static_test,
        lr,
    })
}

/// Trains one model. When training diverges and the config allows it, the
/// run restarts once from scratch at half the learning rate; `on_row` is
/// told about the restart through a fresh sequence of epochs.
pub fn train(
    cfg: &RunConfig,
    train_set: &[Sample],
    test_set: &[Sample],
    seed: u64,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<RunResult> {
    cfg.validate()?;
    match train_once(cfg, train_set, test_set, seed, cfg.train.lr, on_row) {
        Err(e) if cfg.train.retry_on_divergence && is_divergence(&e) => {
            train_once(cfg, train_set, test_set, seed, cfg.train.lr / 2.0, on_row)
        }
        other => other,
    }
}

/// Loads the configured data and trains with `seed`.
pub fn run_experiment(cfg: &RunConfig, seed: u64, on_row: &mut dyn FnMut(&MetricsRow)) -> Result<RunResult> {
    let (train_set, test_set) = load_data(cfg)?;
    train(cfg, &train_set, &test_set, seed, on_row)
}

/// Median with linear interpolation; `NaN` for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// First and third quartiles.
pub fn quartiles(values: &[f64]) -> (f64, f64) {
    (quantile(values, 0.25), quantile(values, 0.75))
}

fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

pub fn aggregate(values: &[f64]) -> Summary {
    let (q1, q3) = quartiles(values);
    Summary {
        n: values.len(),
        median: median(values),
        q1,
        q3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quartiles(&[1.0, 2.0, 3.0, 4.0, 5.0]), (2.0, 4.0));
        let s = aggregate(&[0.9; 5]);
        assert_eq!((s.n, s.median, s.q1, s.q3), (5, 0.9, 0.9, 0.9));
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn csv_row_matches_header() {
        let r = MetricsRow {
            epoch: 3,
            split: Split::Test,
            loss: 0.5,
            accuracy: 0.75,
            lr: 1e-3,
            sparsity: 0.0,
            param_count: 10,
            clamp_count: 0,
            silent_count: 1,
        };
        assert_eq!(r.csv().split(',').count(), METRICS_HEADER.split(',').count());
        assert!(r.csv().starts_with("3,test,0.5,0.75,"));
    }
}
