//! Network layout, trainable parameters and per-batch compilation of delays.
//!
//! Neurons are numbered inputs first, then hidden, then (feed-forward only)
//! outputs. Synapses are numbered row-major through the weight matrices:
//! `W_in` (`n_hidden x n_in`), then `W_out` (`n_out x n_hidden`) or `W_rec`
//! (`n_hidden x n_hidden`, post-major).

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{self, check_epsilon};
use crate::gradcore::GradOptions;
use crate::neurons::{Dynamics, NeuronModel, NeuronParams, PlusSlope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// input -> hidden -> output, each neuron fires at most once, TTFS readout.
    FeedForward,
    /// input -> hidden with all-to-all recurrence, linear readout of spike counts.
    Recurrent,
}

/// Dimensionality of the neuron space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimensionality {
    /// Weights only; every synapse has a one-step delay.
    Zero,
    Spatial(usize),
    /// Free per-synapse delays.
    Infinite,
}

impl Dimensionality {
    pub fn spatial_dims(&self) -> usize {
        match self {
            Dimensionality::Spatial(d) => *d,
            _ => 0,
        }
    }
}

impl fmt::Display for Dimensionality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dimensionality::Zero => write!(f, "0"),
            Dimensionality::Spatial(d) => write!(f, "{d}"),
            Dimensionality::Infinite => write!(f, "inf"),
        }
    }
}

impl std::str::FromStr for Dimensionality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinite" | "∞" => Ok(Dimensionality::Infinite),
            other => match other.parse::<usize>() {
                Ok(0) => Ok(Dimensionality::Zero),
                Ok(d) => Ok(Dimensionality::Spatial(d)),
                Err(_) => Err(Error::InvalidConfig(format!(
                    "dimensionality must be a non-negative integer or \"inf\", got {s:?}"
                ))),
            },
        }
    }
}

impl Serialize for Dimensionality {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Dimensionality::Infinite => s.serialize_str("inf"),
            Dimensionality::Zero => s.serialize_u64(0),
            Dimensionality::Spatial(d) => s.serialize_u64(*d as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Dimensionality {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = Dimensionality;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative integer or \"inf\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Dimensionality, E> {
                Ok(if v == 0 {
                    Dimensionality::Zero
                } else {
                    Dimensionality::Spatial(v as usize)
                })
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Dimensionality, E> {
                if v < 0 {
                    Err(E::custom("dimensionality must be non-negative"))
                } else {
                    self.visit_u64(v as u64)
                }
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Dimensionality, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Weight initialization: normal with the given mean and standard deviation
/// per weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub w_in_mean: f64,
    pub w_in_std: f64,
    pub w_hidden_mean: f64,
    pub w_hidden_std: f64,
    pub readout_std: f64,
    pub position_std: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            w_in_mean: 0.5,
            w_in_std: 0.5,
            w_hidden_mean: 0.3,
            w_hidden_std: 0.5,
            readout_std: 0.1,
            position_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub topology: Topology,
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub dims: Dimensionality,
    /// Maximum relative deviation of tortuous delays; `None` for straight delays.
    pub tortuosity_epsilon: Option<f64>,
    pub model: NeuronModel,
    pub neuron: NeuronParams,
    pub dt: f64,
    pub n_steps: usize,
    pub checkpoint_interval: usize,
    /// Stop a feed-forward run once every output has fired.
    pub early_stop: bool,
    /// Multiplies every distance-derived delay.
    pub scale: f64,
    /// Fixed queue capacity; derived from the initial delays when absent.
    pub queue_capacity: Option<usize>,
    pub plus_slope: PlusSlope,
    pub grad: GradOptions,
    pub init: InitConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            topology: Topology::FeedForward,
            n_in: 5,
            n_hidden: 120,
            n_out: 3,
            dims: Dimensionality::Spatial(2),
            tortuosity_epsilon: None,
            model: NeuronModel::Lif,
            neuron: NeuronParams::for_window(10.0),
            dt: 0.1,
            n_steps: 300,
            checkpoint_interval: 100,
            early_stop: true,
            scale: 1.0,
            queue_capacity: None,
            plus_slope: PlusSlope::PostReset,
            grad: GradOptions::default(),
            init: InitConfig::default(),
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        self.neuron.validate(self.model)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::InvalidConfig("checkpoint_interval must be at least 1".into()));
        }
        if self.n_in == 0 || self.n_hidden == 0 || self.n_out == 0 {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {}", self.scale)));
        }
        if let Some(eps) = self.tortuosity_epsilon {
            check_epsilon(eps)?;
            if !matches!(self.dims, Dimensionality::Spatial(_)) {
                return Err(Error::InvalidConfig(
                    "tortuosity requires a finite non-zero dimensionality".into(),
                ));
            }
        }
        if let Some(c) = self.queue_capacity {
            if c < 2 {
                return Err(Error::InvalidConfig("queue_capacity must be at least 2".into()));
            }
        }
        if !(self.grad.slope_guard > 0.0) {
            return Err(Error::InvalidConfig("slope_guard must be positive".into()));
        }
        Ok(())
    }

    pub fn one_spike(&self) -> bool {
        self.topology == Topology::FeedForward
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn dynamics(&self) -> Result<Dynamics> {
        Ok(Dynamics::new(self.model, self.neuron, self.dt)?.with_plus_slope(self.plus_slope))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Synapse {
    pub pre: usize,
    pub post: usize,
}

/// Static connectivity derived from a [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub topology: Topology,
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub synapses: Vec<Synapse>,
    /// Outgoing synapse indices per neuron, ascending.
    pub outgoing: Vec<Vec<usize>>,
    /// Number of synapses in `W_in`.
    pub n_input_synapses: usize,
}

impl Layout {
    pub fn new(config: &NetworkConfig) -> Self {
        let (n_in, n_h, n_out) = (config.n_in, config.n_hidden, config.n_out);
        let mut synapses = Vec::new();
        for h in 0..n_h {
            for i in 0..n_in {
                synapses.push(Synapse { pre: i, post: n_in + h });
            }
        }
        let n_input_synapses = synapses.len();
        match config.topology {
            Topology::FeedForward => {
                for o in 0..n_out {
                    for h in 0..n_h {
                        synapses.push(Synapse {
                            pre: n_in + h,
                            post: n_in + n_h + o,
                        });
                    }
                }
            }
            Topology::Recurrent => {
                for post in 0..n_h {
                    for pre in 0..n_h {
                        synapses.push(Synapse {
                            pre: n_in + pre,
                            post: n_in + post,
                        });
                    }
                }
            }
        }
        let n_neurons = Self::neuron_count(config);
        let mut outgoing = vec![Vec::new(); n_neurons];
        for (s, syn) in synapses.iter().enumerate() {
            outgoing[syn.pre].push(s);
        }
        Layout {
            topology: config.topology,
            n_in,
            n_hidden: n_h,
            n_out,
            synapses,
            outgoing,
            n_input_synapses,
        }
    }

    fn neuron_count(config: &NetworkConfig) -> usize {
        match config.topology {
            Topology::FeedForward => config.n_in + config.n_hidden + config.n_out,
            Topology::Recurrent => config.n_in + config.n_hidden,
        }
    }

    pub fn n_neurons(&self) -> usize {
        self.outgoing.len()
    }

    pub fn n_synapses(&self) -> usize {
        self.synapses.len()
    }

    pub fn hidden_range(&self) -> std::ops::Range<usize> {
        self.n_in..self.n_in + self.n_hidden
    }

    /// Neurons whose first spike times are the network output (feed-forward).
    pub fn output_range(&self) -> std::ops::Range<usize> {
        match self.topology {
            Topology::FeedForward => {
                self.n_in + self.n_hidden..self.n_in + self.n_hidden + self.n_out
            }
            Topology::Recurrent => 0..0,
        }
    }

    /// Every neuron has a position; in recurrent mode the readout is position-free
    /// and all simulated neurons are positioned.
    pub fn n_positioned(&self) -> usize {
        self.n_neurons()
    }
}

/// Trainable parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    /// One weight per synapse.
    pub weights: Vec<f64>,
    /// Row-major `n_neurons x dims`.
    pub positions: Vec<f64>,
    /// One `E` per synapse when tortuous.
    pub tortuosity: Vec<f64>,
    /// One delay per synapse in the infinite-dimensional mode.
    pub delays: Vec<f64>,
    /// Row-major `n_out x n_hidden` (recurrent only).
    pub readout: Vec<f64>,
}

pub const BLOCK_NAMES: [&str; 5] = ["weights", "positions", "tortuosity", "delays", "readout"];

impl Params {
    pub fn zeros_like(other: &Params) -> Params {
        Params {
            weights: vec![0.0; other.weights.len()],
            positions: vec![0.0; other.positions.len()],
            tortuosity: vec![0.0; other.tortuosity.len()],
            delays: vec![0.0; other.delays.len()],
            readout: vec![0.0; other.readout.len()],
        }
    }

    pub fn blocks(&self) -> [&Vec<f64>; 5] {
        [
            &self.weights,
            &self.positions,
            &self.tortuosity,
            &self.delays,
            &self.readout,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.weights,
            &mut self.positions,
            &mut self.tortuosity,
            &mut self.delays,
            &mut self.readout,
        ]
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len());
        let mut off = 0;
        for b in self.blocks_mut() {
            let n = b.len();
            b.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Start offsets of each block in the flat vector.
    pub fn offsets(&self) -> [usize; 6] {
        let mut out = [0; 6];
        for (k, b) in self.blocks().iter().enumerate() {
            out[k + 1] = out[k] + b.len();
        }
        out
    }

    /// Block name and in-block index of a flat index.
    pub fn locate(&self, flat: usize) -> (&'static str, usize) {
        let off = self.offsets();
        for k in 0..5 {
            if flat < off[k + 1] {
                return (BLOCK_NAMES[k], flat - off[k]);
            }
        }
        panic!("flat index {flat} out of range");
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// First NaN entry, if any.
    pub fn find_nan(&self) -> Option<(&'static str, usize)> {
        for (k, b) in self.blocks().iter().enumerate() {
            if let Some(i) = b.iter().position(|x| x.is_nan()) {
                return Some((BLOCK_NAMES[k], i));
            }
        }
        None
    }

    pub fn check_finite_gradient(&self) -> Result<()> {
        match self.find_nan() {
            Some((block, index)) => Err(Error::NanGradient { block, index }),
            None => Ok(()),
        }
    }
}

/// Parameter counts by block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub weights: usize,
    pub positions: usize,
    pub tortuosity: usize,
    pub delays: usize,
    pub readout: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.weights + self.positions + self.tortuosity + self.delays + self.readout
    }
}

/// A configured network with its parameters and fixed queue capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub layout: Layout,
    pub params: Params,
    pub capacity: usize,
}

impl Network {
    /// Random initialization; deterministic in `seed`.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Network> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = config.init;
        let normal = |mean: f64, std: f64| {
            Normal::new(mean, std.max(0.0)).map_err(|e| Error::InvalidConfig(e.to_string()))
        };

        let w_in = normal(init.w_in_mean, init.w_in_std)?;
        let w_h = normal(init.w_hidden_mean, init.w_hidden_std)?;
        let weights: Vec<f64> = (0..layout.n_synapses())
            .map(|s| {
                if s < layout.n_input_synapses {
                    w_in.sample(&mut rng)
                } else {
                    w_h.sample(&mut rng)
                }
            })
            .collect();

        let pos = normal(0.0, init.position_std)?;
        let n = layout.n_positioned();
        let dims = config.dims.spatial_dims();
        let positions: Vec<f64> = (0..n * dims).map(|_| pos.sample(&mut rng)).collect();

        let tortuosity = if config.tortuosity_epsilon.is_some() {
            vec![0.0; layout.n_synapses()]
        } else {
            Vec::new()
        };

        // Free delays start from the distances of random 2-D positions so the
        // unconstrained baseline sees the same initial delay distribution.
        let delays = if config.dims == Dimensionality::Infinite {
            let p: Vec<f64> = (0..n * 2).map(|_| pos.sample(&mut rng)).collect();
            layout
                .synapses
                .iter()
                .map(|syn| {
                    config.scale
                        * geometry::distance(&p[2 * syn.pre..2 * syn.pre + 2], &p[2 * syn.post..2 * syn.post + 2])
                })
                .collect()
        } else {
            Vec::new()
        };

        let readout = if config.topology == Topology::Recurrent {
            let r = normal(0.0, init.readout_std)?;
            (0..config.n_out * config.n_hidden).map(|_| r.sample(&mut rng)).collect()
        } else {
            Vec::new()
        };

        let params = Params {
            weights,
            positions,
            tortuosity,
            delays,
            readout,
        };
        Network::from_params(config, params, None)
    }

    /// Builds a network from explicit parameters. The capacity is derived from
    /// the current delays unless given (or fixed by the config).
    pub fn from_params(config: NetworkConfig, params: Params, capacity: Option<usize>) -> Result<Network> {
        config.validate()?;
        let layout = Layout::new(&config);
        let n_syn = layout.n_synapses();
        let dims = config.dims.spatial_dims();
        let expect = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name}: expected {want} values, got {got}")))
            }
        };
        expect("weights", params.weights.len(), n_syn)?;
        expect("positions", params.positions.len(), layout.n_positioned() * dims)?;
        expect(
            "tortuosity",
            params.tortuosity.len(),
            if config.tortuosity_epsilon.is_some() { n_syn } else { 0 },
        )?;
        expect(
            "delays",
            params.delays.len(),
            if config.dims == Dimensionality::Infinite { n_syn } else { 0 },
        )?;
        expect(
            "readout",
            params.readout.len(),
            if config.topology == Topology::Recurrent {
                config.n_out * config.n_hidden
            } else {
                0
            },
        )?;
        if let Some((block, index)) = params
            .blocks()
            .iter()
            .enumerate()
            .find_map(|(k, b)| b.iter().position(|x| !x.is_finite()).map(|i| (BLOCK_NAMES[k], i)))
        {
            return Err(Error::InvalidInput(format!("non-finite parameter in {block} at {index}")));
        }
        let mut net = Network {
            config,
            layout,
            params,
            capacity: 2,
        };
        net.capacity = match capacity.or(net.config.queue_capacity) {
            Some(c) => c,
            None => {
                let max_delay = net.synapse_delays().into_iter().fold(0.0, f64::max);
                ((max_delay * 4.0 / net.config.dt).ceil() as usize).max(4)
            }
        };
        if net.capacity < 2 {
            return Err(Error::InvalidConfig("queue capacity must be at least 2".into()));
        }
        net.project();
        Ok(net)
    }

    /// Continuous delay of every synapse (ms).
    pub fn synapse_delays(&self) -> Vec<f64> {
        let cfg = &self.config;
        let p = &self.params;
        match cfg.dims {
            Dimensionality::Zero => vec![cfg.dt; self.layout.n_synapses()],
            Dimensionality::Infinite => p.delays.clone(),
            Dimensionality::Spatial(d) => self
                .layout
                .synapses
                .iter()
                .enumerate()
                .map(|(s, syn)| {
                    let tort = cfg.tortuosity_epsilon.map(|eps| (p.tortuosity[s], eps));
                    geometry::pair_delay(
                        &p.positions[syn.pre * d..(syn.pre + 1) * d],
                        &p.positions[syn.post * d..(syn.post + 1) * d],
                        cfg.scale,
                        tort,
                    )
                })
                .collect(),
        }
    }

    /// Keeps free delays inside the representable range.
    pub fn project(&mut self) {
        let max = (self.capacity - 1) as f64 * self.config.dt;
        for d in &mut self.params.delays {
            *d = d.clamp(0.0, max);
        }
    }

    pub fn param_count(&self) -> ParamCount {
        ParamCount {
            weights: self.params.weights.len(),
            positions: self.params.positions.len(),
            tortuosity: self.params.tortuosity.len(),
            delays: self.params.delays.len(),
            readout: self.params.readout.len(),
        }
    }

    /// Parameter count with pruned (zero) weights excluded.
    pub fn effective_param_count(&self) -> usize {
        let zeros = self.params.weights.iter().filter(|w| **w == 0.0).count();
        self.param_count().total() - zeros
    }

    pub fn sparsity(&self) -> f64 {
        let n = self.params.weights.len();
        if n == 0 {
            return 0.0;
        }
        self.params.weights.iter().filter(|w| **w == 0.0).count() as f64 / n as f64
    }

    pub fn compile(&self) -> Result<Compiled> {
        let dynamics = self.config.dynamics()?;
        let delays = self.synapse_delays();
        let mut clamped = 0;
        let steps = delays
            .iter()
            .map(|&d| {
                if self.config.dims == Dimensionality::Zero {
                    return 1;
                }
                let (s, c) = geometry::delay_to_step(d, self.config.dt, self.capacity);
                clamped += c as usize;
                s
            })
            .collect();
        Ok(Compiled {
            dynamics,
            delays,
            steps,
            clamped,
        })
    }

    /// Sparse Jacobian of one synapse's delay with respect to the flat
    /// parameter vector, as `(flat index, value)` pairs.
    pub fn delay_jacobian(&self, synapse: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let cfg = &self.config;
        let p = &self.params;
        let off = p.offsets();
        match cfg.dims {
            Dimensionality::Zero => {}
            Dimensionality::Infinite => out.push((off[3] + synapse, 1.0)),
            Dimensionality::Spatial(d) => {
                let syn = self.layout.synapses[synapse];
                let tort = cfg.tortuosity_epsilon.map(|eps| (p.tortuosity[synapse], eps));
                let mut g = vec![0.0; d];
                let de = geometry::pair_delay_grad(
                    &p.positions[syn.pre * d..(syn.pre + 1) * d],
                    &p.positions[syn.post * d..(syn.post + 1) * d],
                    cfg.scale,
                    tort,
                    &mut g,
                );
                if syn.pre != syn.post {
                    for (k, gk) in g.iter().enumerate() {
                        out.push((off[1] + syn.pre * d + k, *gk));
                        out.push((off[1] + syn.post * d + k, -*gk));
                    }
                }
                if tort.is_some() {
                    out.push((off[2] + synapse, de));
                }
            }
        }
    }

    /// Pulls per-synapse delay adjoints back onto positions, tortuosity or free delays.
    pub fn delay_vjp(&self, delay_adj: &[f64], grad: &mut Params) {
        let cfg = &self.config;
        let p = &self.params;
        match cfg.dims {
            Dimensionality::Zero => {}
            Dimensionality::Infinite => {
                for (g, a) in grad.delays.iter_mut().zip(delay_adj) {
                    *g += a;
                }
            }
            Dimensionality::Spatial(d) => {
                let mut g = vec![0.0; d];
                for (s, syn) in self.layout.synapses.iter().enumerate() {
                    let adj = delay_adj[s];
                    if adj == 0.0 {
                        continue;
                    }
                    let tort = cfg.tortuosity_epsilon.map(|eps| (p.tortuosity[s], eps));
                    let de = geometry::pair_delay_grad(
                        &p.positions[syn.pre * d..(syn.pre + 1) * d],
                        &p.positions[syn.post * d..(syn.post + 1) * d],
                        cfg.scale,
                        tort,
                        &mut g,
                    );
                    if syn.pre != syn.post {
                        for k in 0..d {
                            grad.positions[syn.pre * d + k] += adj * g[k];
                            grad.positions[syn.post * d + k] -= adj * g[k];
                        }
                    }
                    if tort.is_some() {
                        grad.tortuosity[s] += adj * de;
                    }
                }
            }
        }
    }
}

/// Delays and step offsets for one parameter setting.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub dynamics: Dynamics,
    pub delays: Vec<f64>,
    pub steps: Vec<usize>,
    pub clamped: usize,
}
