//! Neuron positions to synaptic delays.
//!
//! Delays are `scale * |r_i - r_j|_2`, optionally modulated by a bounded
//! tortuosity factor `(1 + eps * tanh(E_ij)) / 2`. Everything here is a pure
//! function of its inputs; the simulator turns delays into integer arrival
//! offsets with [`delay_to_steps`].

use crate::error::{Error, Result};

/// Norm floor used only when differentiating the distance.
pub const NORM_FLOOR: f64 = 1e-9;

/// Positions of `n` neurons in `dims`-dimensional space (row-major `n x dims`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialEmbedding {
    pub positions: Vec<f64>,
    pub dims: usize,
    pub scale: f64,
    pub tortuosity: Option<Tortuosity>,
}

/// Per-pair deviation parameters, row-major `n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tortuosity {
    pub e: Vec<f64>,
    pub epsilon: f64,
}

/// Dense `n x n` delays in simulation time units.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMatrix {
    pub n: usize,
    pub delays: Vec<f64>,
}

impl DelayMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.delays[i * self.n + j]
    }
}

/// Integer arrival offsets (in timesteps) and how many had to be clamped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepMatrix {
    pub steps: Vec<usize>,
    pub clamped: usize,
}

impl SpatialEmbedding {
    pub fn new(positions: Vec<f64>, dims: usize, scale: f64) -> Result<Self> {
        let emb = SpatialEmbedding {
            positions,
            dims,
            scale,
            tortuosity: None,
        };
        emb.validate()?;
        Ok(emb)
    }

    pub fn with_tortuosity(mut self, e: Vec<f64>, epsilon: f64) -> Result<Self> {
        self.tortuosity = Some(Tortuosity { e, epsilon });
        self.validate()?;
        Ok(self)
    }

    pub fn n_neurons(&self) -> usize {
        if self.dims == 0 {
            0
        } else {
            self.positions.len() / self.dims
        }
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dims..(i + 1) * self.dims]
    }

    fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::InvalidInput(
                "spatial embedding needs at least one dimension".into(),
            ));
        }
        if self.positions.len() % self.dims != 0 {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not divide into {}-dimensional positions",
                self.positions.len(),
                self.dims
            )));
        }
        if let Some(i) = self.positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate at index {i}"
            )));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "delay scale must be positive, got {}",
                self.scale
            )));
        }
        if let Some(t) = &self.tortuosity {
            check_epsilon(t.epsilon)?;
            let n = self.n_neurons();
            if t.e.len() != n * n {
                return Err(Error::InvalidInput(format!(
                    "tortuosity matrix has {} entries, expected {}",
                    t.e.len(),
                    n * n
                )));
            }
        }
        Ok(())
    }
}

pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if (0.0..1.0).contains(&epsilon) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "tortuosity epsilon must lie in [0, 1), got {epsilon}"
        )))
    }
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Tortuosity factor `(1 + eps tanh(e)) / 2` and its derivative in `e`.
#[inline]
pub fn tortuous_factor(e: f64, epsilon: f64) -> (f64, f64) {
    let t = e.tanh();
    (0.5 * (1.0 + epsilon * t), 0.5 * epsilon * (1.0 - t * t))
}

/// Delay between two positions. `tortuosity` is `(E_ij, epsilon)`.
#[inline]
pub fn pair_delay(a: &[f64], b: &[f64], scale: f64, tortuosity: Option<(f64, f64)>) -> f64 {
    let dist = scale * distance(a, b);
    match tortuosity {
        Some((e, eps)) => tortuous_factor(e, eps).0 * dist,
        None => dist,
    }
}

/// Partial derivatives of [`pair_delay`].
///
/// Writes `d delay / d a` into `grad_a` (the derivative in `b` is its
/// negation) and returns `d delay / d E` (zero without tortuosity).
pub fn pair_delay_grad(
    a: &[f64],
    b: &[f64],
    scale: f64,
    tortuosity: Option<(f64, f64)>,
    grad_a: &mut [f64],
) -> f64 {
    let dist = distance(a, b);
    let denom = dist.max(NORM_FLOOR);
    let (factor, dfactor) = match tortuosity {
        Some((e, eps)) => tortuous_factor(e, eps),
        None => (1.0, 0.0),
    };
    for ((g, x), y) in grad_a.iter_mut().zip(a).zip(b) {
        *g = scale * factor * (x - y) / denom;
    }
    scale * dfactor * dist
}

pub fn euclidean_delays(embedding: &SpatialEmbedding) -> Result<DelayMatrix> {
    embedding.validate()?;
    let n = embedding.n_neurons();
    let mut delays = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = pair_delay(
                embedding.position(i),
                embedding.position(j),
                embedding.scale,
                None,
            );
            delays[i * n + j] = d;
            delays[j * n + i] = d;
        }
    }
    Ok(DelayMatrix { n, delays })
}

pub fn tortuous_delays(embedding: &SpatialEmbedding) -> Result<DelayMatrix> {
    embedding.validate()?;
    let tort = embedding.tortuosity.as_ref().ok_or_else(|| {
        Error::InvalidConfig("tortuous delays need a tortuosity matrix and epsilon".into())
    })?;
    let n = embedding.n_neurons();
    let mut delays = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                delays[i * n + j] = pair_delay(
                    embedding.position(i),
                    embedding.position(j),
                    embedding.scale,
                    Some((tort.e[i * n + j], tort.epsilon)),
                );
            }
        }
    }
    Ok(DelayMatrix { n, delays })
}

/// Round-half-up conversion of one delay to an arrival offset in `[1, capacity - 1]`.
///
/// Returns the offset and whether it was clamped at the top.
#[inline]
pub fn delay_to_step(delay: f64, dt: f64, capacity: usize) -> (usize, bool) {
    debug_assert!(capacity >= 2);
    let raw = (delay / dt + 0.5).floor();
    let max = (capacity - 1) as f64;
    if raw > max {
        (capacity - 1, true)
    } else if raw < 1.0 {
        (1, false)
    } else {
        (raw as usize, false)
    }
}

pub fn delay_to_steps(delays: &DelayMatrix, dt: f64, capacity: usize) -> Result<StepMatrix> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if capacity < 2 {
        return Err(Error::InvalidConfig(format!(
            "queue capacity must be at least 2, got {capacity}"
        )));
    }
    let mut clamped = 0;
    let steps = delays
        .delays
        .iter()
        .map(|&d| {
            let (s, c) = delay_to_step(d, dt, capacity);
            clamped += c as usize;
            s
        })
        .collect();
    Ok(StepMatrix { steps, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pythagorean_delay() {
        let emb = SpatialEmbedding::new(vec![0.0, 0.0, 3.0, 4.0], 2, 1.0).unwrap();
        let d = euclidean_delays(&emb).unwrap();
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn coincident_points_have_zero_delay_and_finite_gradient() {
        let emb = SpatialEmbedding::new(vec![1.0, 2.0, 1.0, 2.0], 2, 1.0).unwrap();
        assert_eq!(euclidean_delays(&emb).unwrap().get(0, 1), 0.0);
        let mut g = [0.0; 2];
        pair_delay_grad(&[1.0, 2.0], &[1.0, 2.0], 1.0, None, &mut g);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn matches_pairwise_oracle() {
        let pts = [
            [0.3, -1.2, 2.0],
            [1.7, 0.4, -0.5],
            [-2.2, 0.9, 0.1],
            [0.0, 0.0, 1.0],
        ];
        let flat: Vec<f64> = pts.iter().flatten().copied().collect();
        let emb = SpatialEmbedding::new(flat, 3, 1.0).unwrap();
        let d = euclidean_delays(&emb).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += (pts[i][k] - pts[j][k]).powi(2);
                }
                assert!((d.get(i, j) - s.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scale_multiplies_delays() {
        let emb = SpatialEmbedding::new(vec![0.0, 0.0, 3.0, 4.0], 2, 10.0).unwrap();
        assert_eq!(euclidean_delays(&emb).unwrap().get(0, 1), 50.0);
    }

    #[test]
    fn rejects_non_finite_positions() {
        assert!(SpatialEmbedding::new(vec![0.0, f64::NAN], 2, 1.0).is_err());
        assert!(SpatialEmbedding::new(vec![0.0, 1.0], 2, 0.0).is_err());
    }

    #[test]
    fn tortuous_limits() {
        let a = [0.0, 0.0];
        let b = [3.0, 4.0];
        assert!((pair_delay(&a, &b, 1.0, Some((0.0, 0.5))) - 2.5).abs() < 1e-15);
        assert!((pair_delay(&a, &b, 1.0, Some((50.0, 1.0))) - 5.0).abs() < 1e-12);
        assert!(pair_delay(&a, &b, 1.0, Some((-50.0, 1.0))).abs() < 1e-12);
    }

    #[test]
    fn tortuous_rejects_bad_epsilon() {
        let emb = SpatialEmbedding::new(vec![0.0, 1.0], 1, 1.0).unwrap();
        assert!(emb.clone().with_tortuosity(vec![0.0; 4], 1.0).is_err());
        assert!(emb.clone().with_tortuosity(vec![0.0; 4], -0.1).is_err());
        let ok = emb.with_tortuosity(vec![0.0; 4], 0.9).unwrap();
        let d = tortuous_delays(&ok).unwrap();
        assert!((d.get(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn step_conversion() {
        assert_eq!(delay_to_step(5.0, 1.0, 100), (5, false));
        assert_eq!(delay_to_step(0.0, 1.0, 100), (1, false));
        assert_eq!(delay_to_step(2.5, 1.0, 100), (3, false));
        assert_eq!(delay_to_step(1000.0, 1.0, 100), (99, true));

        let m = DelayMatrix {
            n: 2,
            delays: vec![0.0, 1000.0, 5.0, 0.0],
        };
        let s = delay_to_steps(&m, 1.0, 100).unwrap();
        assert_eq!(s.steps, vec![1, 99, 5, 1]);
        assert_eq!(s.clamped, 1);
    }
}
