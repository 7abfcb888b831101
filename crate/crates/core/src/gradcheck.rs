//! Finite-difference gradient check against the continuous-time reference.

use crate::error::Result;
use crate::network::{Dimensionality, InitConfig, Network, NetworkConfig, Params, Topology, BLOCK_NAMES};
use crate::neurons::{NeuronModel, NeuronParams};
use crate::objectives::{Objective, TtfsLoss};
use crate::reference::{self, ReferenceOptions};
use crate::simulator::{run_with_gradients, InputSpike, Sample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    pub reference: ReferenceOptions,
    /// Floor on the denominator of the relative error.
    pub abs_floor: f64,
    /// Further floor, as a fraction of the block's largest finite-difference
    /// magnitude. The engine differentiates the time-stepped system, so it
    /// differs from the continuous oracle by O(dt) in absolute terms; this
    /// keeps near-zero entries from dominating the block's error.
    pub block_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-4,
            reference: ReferenceOptions::default(),
            abs_floor: 1e-6,
            block_floor: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: &'static str,
    pub checked: usize,
    /// Parameters skipped because a spike appeared or vanished under perturbation.
    pub flagged: usize,
    pub max_rel_err: f64,
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss_engine: f64,
    pub loss_reference: f64,
    pub blocks: Vec<BlockReport>,
    pub grazing: usize,
    pub engine: Params,
    pub finite_diff: Params,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.blocks.iter().all(|b| b.max_rel_err < tolerance)
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn reference_loss(net: &Network, samples: &[Sample], objective: &Objective, opts: &ReferenceOptions) -> Result<(f64, Vec<usize>)> {
    let mut loss = 0.0;
    let mut counts = Vec::new();
    for s in samples {
        let tr = reference::simulate(net, s, opts)?;
        loss += objective
            .evaluate(&tr.spike_times, net.config.horizon(), &net.layout, &net.params.readout, s.label)
            .value;
        counts.extend(tr.spike_times.iter().map(|t| t.len()));
    }
    Ok((loss, counts))
}

/// Compares engine gradients with central differences of the reference loss
/// for every parameter of every non-empty block.
pub fn gradcheck(net: &Network, samples: &[Sample], objective: &Objective, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let comp = net.compile()?;
    let mut engine = Params::zeros_like(&net.params);
    let mut loss_engine = 0.0;
    let mut grazing = 0;
    for s in samples {
        let r = run_with_gradients(net, &comp, s, objective)?;
        engine.add_assign(&r.grad);
        loss_engine += r.loss;
        grazing += r.trace.counters.grazing;
    }
    let (loss_reference, _) = reference_loss(net, samples, objective, &opts.reference)?;

    let flat0 = net.params.flatten();
    let eng_flat = engine.flatten();
    let offsets = net.params.offsets();
    let mut fd_flat = vec![0.0; flat0.len()];
    let mut blocks = Vec::new();
    for b in 0..5 {
        let range = offsets[b]..offsets[b + 1];
        if range.is_empty() {
            continue;
        }
        let mut rep = BlockReport {
            name: BLOCK_NAMES[b],
            checked: 0,
            flagged: 0,
            max_rel_err: 0.0,
            worst_index: None,
        };
        let mut checked = Vec::new();
        for idx in range.clone() {
            let eval = |delta: f64| -> Result<(f64, Vec<usize>)> {
                let mut flat = flat0.clone();
                flat[idx] += delta;
                let mut p = net.params.clone();
                p.set_flat(&flat);
                let perturbed = Network::from_params(net.config.clone(), p, Some(net.capacity))?;
                reference_loss(&perturbed, samples, objective, &opts.reference)
            };
            let (lp, cp) = eval(opts.h)?;
            let (lm, cm) = eval(-opts.h)?;
            fd_flat[idx] = (lp - lm) / (2.0 * opts.h);
            if cp != cm {
                rep.flagged += 1;
            } else {
                checked.push(idx);
            }
        }
        let peak = checked.iter().fold(0.0f64, |m, &i| m.max(fd_flat[i].abs()));
        let floor = opts.abs_floor.max(opts.block_floor * peak);
        for idx in checked {
            rep.checked += 1;
            let err = relative_error(eng_flat[idx], fd_flat[idx], floor);
            if err > rep.max_rel_err || rep.worst_index.is_none() {
                rep.max_rel_err = rep.max_rel_err.max(err);
                rep.worst_index = Some(idx - range.start);
            }
        }
        blocks.push(rep);
    }
    let mut finite_diff = Params::zeros_like(&net.params);
    finite_diff.set_flat(&fd_flat);
    Ok(GradCheckReport {
        loss_engine,
        loss_reference,
        blocks,
        grazing,
        engine,
        finite_diff,
    })
}

/// Small feed-forward network (3 inputs, 5 hidden, 3 outputs) with a 30 ms
/// horizon at `dt`, used for gradient checks.
pub fn small_network(model: NeuronModel, dims: Dimensionality, dt: f64, seed: u64) -> Result<Network> {
    let neuron = match model {
        NeuronModel::Lif => NeuronParams {
            tau_mem: 5.0,
            tau_syn: 2.5,
            ..NeuronParams::default()
        },
        NeuronModel::Adex => NeuronParams {
            tau_mem: 5.0,
            tau_syn: 2.5,
            tau_adapt: 20.0,
            a: 0.05,
            b: 0.1,
            delta_t: 0.1,
            bias_current: 0.0,
        },
    };
    let cfg = NetworkConfig {
        topology: Topology::FeedForward,
        n_in: 3,
        n_hidden: 5,
        n_out: 3,
        dims,
        model,
        neuron,
        dt,
        n_steps: (30.0 / dt).round() as usize,
        early_stop: false,
        init: InitConfig {
            w_in_mean: 1.2,
            w_in_std: 0.6,
            w_hidden_mean: 1.2,
            w_hidden_std: 0.6,
            ..InitConfig::default()
        },
        ..NetworkConfig::default()
    };
    Network::init(cfg, seed)
}

pub fn small_sample() -> Sample {
    Sample {
        inputs: vec![
            InputSpike { neuron: 0, time: 1.0 },
            InputSpike { neuron: 1, time: 2.5 },
            InputSpike { neuron: 2, time: 4.0 },
        ],
        label: 1,
    }
}

pub fn default_objective() -> Objective {
    Objective::Ttfs(TtfsLoss::default())
}
