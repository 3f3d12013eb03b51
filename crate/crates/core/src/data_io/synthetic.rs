//! Seeded vessel-like image/mask pairs for smoke runs and tests.
//!
//! Each mask is a handful of thick sinusoidal curves crossing the frame.
//! The image has a bright reddish background with darker vessels, as in
//! fundus photographs, plus mild Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::Sample;
use crate::tensor::Tensor;

const BACKGROUND: [f32; 3] = [0.75, 0.45, 0.25];
const VESSEL: [f32; 3] = [0.45, 0.18, 0.10];
const NOISE_STD: f32 = 0.03;

struct Curve {
    horizontal: bool,
    offset: f64,
    amplitude: f64,
    frequency: f64,
    phase: f64,
    half_width: f64,
}

impl Curve {
    fn random(size: usize, rng: &mut impl Rng) -> Self {
        let s = size as f64;
        Curve {
            horizontal: rng.gen(),
            offset: rng.gen_range(0.15 * s..0.85 * s),
            amplitude: rng.gen_range(0.03 * s..0.15 * s),
            frequency: rng.gen_range(0.5..2.0) * std::f64::consts::TAU / s,
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            half_width: rng.gen_range(0.8..2.2) * s / 64.0,
        }
    }

    fn covers(&self, y: f64, x: f64) -> bool {
        let (along, across) = if self.horizontal { (x, y) } else { (y, x) };
        let centre = self.offset + self.amplitude * (self.frequency * along + self.phase).sin();
        (across - centre).abs() <= self.half_width
    }
}

/// A `size`×`size` pair determined by `seed`: image (1, 3, size, size) in
/// [0, 1] and binary mask (1, 1, size, size).
pub fn synthetic_sample(size: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves: Vec<Curve> = (0..rng.gen_range(3..6)).map(|_| Curve::random(size, &mut rng)).collect();
    let noise = Normal::new(0.0, NOISE_STD).expect("finite std");
    let plane = size * size;
    let mut mask = Tensor::zeros([1, 1, size, size]);
    let mut image = Tensor::zeros([1, 3, size, size]);
    for i in 0..plane {
        let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
        let vessel = curves.iter().any(|c| c.covers(y, x));
        mask.data_mut()[i] = if vessel { 1.0 } else { 0.0 };
        let base = if vessel { VESSEL } else { BACKGROUND };
        for (c, b) in base.iter().enumerate() {
            let v: f32 = b + noise.sample(&mut rng);
            image.data_mut()[c * plane + i] = v.clamp(0.0, 1.0);
        }
    }
    Sample {
        name: format!("synthetic-{seed}"),
        image,
        mask,
    }
}

/// `count` pairs with seeds `seed, seed + 1, …`.
pub fn synthetic_set(count: usize, size: usize, seed: u64) -> Vec<Sample> {
    (0..count as u64).map(|k| synthetic_sample(size, seed.wrapping_add(k))).collect()
}
