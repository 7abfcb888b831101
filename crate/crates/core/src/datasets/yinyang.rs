//! Yin-Yang classification task.
//!
//! Points lie in the unit square inside a circle of radius 0.5 centred at
//! (0.5, 0.5). The two eyes sit at (0.25, 0.5) and (0.75, 0.5) with radius 0.1.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::simulator::{InputSpike, Sample};

pub const R_BIG: f64 = 0.5;
pub const R_SMALL: f64 = 0.1;
/// Inputs per sample: x, y, 1 - x, 1 - y and a bias neuron.
pub const N_INPUTS: usize = 5;
pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum YinYangClass {
    Yang = 0,
    Yin = 1,
    Dot = 2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YinYangSample {
    pub x: f64,
    pub y: f64,
    pub label: YinYangClass,
}

pub fn which_class(x: f64, y: f64) -> YinYangClass {
    let d_right = ((x - 1.5 * R_BIG).powi(2) + (y - R_BIG).powi(2)).sqrt();
    let d_left = ((x - 0.5 * R_BIG).powi(2) + (y - R_BIG).powi(2)).sqrt();
    if d_right < R_SMALL || d_left < R_SMALL {
        return YinYangClass::Dot;
    }
    let yin = d_right <= R_SMALL
        || (d_left > R_SMALL && d_left <= 0.5 * R_BIG)
        || (y > R_BIG && d_right > 0.5 * R_BIG);
    if yin {
        YinYangClass::Yin
    } else {
        YinYangClass::Yang
    }
}

fn class_of(k: usize) -> YinYangClass {
    match k % N_CLASSES {
        0 => YinYangClass::Yang,
        1 => YinYangClass::Yin,
        _ => YinYangClass::Dot,
    }
}

/// `n` points with class counts differing by at most one, shuffled.
/// Deterministic in `(n, seed)`.
pub fn generate_yinyang(n: usize, seed: u64) -> Vec<YinYangSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let goal = class_of(k);
        loop {
            let x: f64 = rng.gen::<f64>() * 2.0 * R_BIG;
            let y: f64 = rng.gen::<f64>() * 2.0 * R_BIG;
            if ((x - R_BIG).powi(2) + (y - R_BIG).powi(2)).sqrt() > R_BIG {
                continue;
            }
            let label = which_class(x, y);
            if label == goal {
                out.push(YinYangSample { x, y, label });
                break;
            }
        }
    }
    out.shuffle(&mut rng);
    out
}

/// Later spikes encode larger values; the bias neuron (index 4) fires at 0.
pub fn encode_yy(sample: &YinYangSample, window: f64) -> Sample {
    let values = [sample.x, sample.y, 1.0 - sample.x, 1.0 - sample.y];
    let mut inputs: Vec<InputSpike> = values
        .iter()
        .enumerate()
        .map(|(neuron, v)| InputSpike {
            neuron,
            time: v.clamp(0.0, 1.0) * window,
        })
        .collect();
    inputs.push(InputSpike { neuron: 4, time: 0.0 });
    Sample {
        inputs,
        label: sample.label as usize,
    }
}

pub fn encode_all(samples: &[YinYangSample], window: f64) -> Vec<Sample> {
    samples.iter().map(|s| encode_yy(s, window)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_centres() {
        assert_eq!(which_class(0.25, 0.5), YinYangClass::Dot);
        assert_eq!(which_class(0.75, 0.5), YinYangClass::Dot);
    }

    #[test]
    fn far_points_by_half_plane() {
        // Upper half away from the right lobe is yin, lower half away from the left lobe is yang.
        assert_eq!(which_class(0.5, 0.97), YinYangClass::Yin);
        assert_eq!(which_class(0.5, 0.03), YinYangClass::Yang);
        // Ring around each dot takes the opposite colour of its half.
        assert_eq!(which_class(0.25, 0.65), YinYangClass::Yin);
        assert_eq!(which_class(0.75, 0.35), YinYangClass::Yang);
    }

    #[test]
    fn balanced_and_deterministic() {
        let a = generate_yinyang(3000, 1);
        let mut counts = [0; 3];
        for s in &a {
            counts[s.label as usize] += 1;
        }
        assert_eq!(counts, [1000, 1000, 1000]);
        assert_eq!(a, generate_yinyang(3000, 1));
        assert_ne!(a, generate_yinyang(3000, 2));
        let b = generate_yinyang(7, 3);
        let mut c = [0; 3];
        for s in &b {
            c[s.label as usize] += 1;
        }
        assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
    }

    #[test]
    fn encoding() {
        let s = encode_yy(&YinYangSample { x: 0.0, y: 1.0, label: YinYangClass::Yin }, 10.0);
        assert_eq!(s.inputs.len(), N_INPUTS);
        assert_eq!(s.inputs[0], InputSpike { neuron: 0, time: 0.0 });
        assert_eq!(s.inputs[1].time, 10.0);
        assert_eq!(s.inputs[2].time, 10.0);
        assert_eq!(s.inputs[3].time, 0.0);
        assert_eq!(s.inputs[4], InputSpike { neuron: 4, time: 0.0 });
        assert_eq!(s.label, 1);
    }
}
