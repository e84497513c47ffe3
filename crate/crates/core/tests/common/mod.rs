#![allow(dead_code)]

use dacp::{FeatureMap, Shape4, WeightTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn weights(rng: &mut ChaCha8Rng, kh: usize, kw: usize, c: usize, n: usize) -> WeightTensor {
    let shape = Shape4::new(kh, kw, c, n).unwrap();
    WeightTensor::from_vec(shape, uniform(rng, shape.len())).unwrap()
}

pub fn map(rng: &mut ChaCha8Rng, batch: usize, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::from_vec(batch, h, w, c, uniform(rng, batch * h * w * c)).unwrap()
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a − n| / max |n|`, the largest error relative to the gradient's
/// scale.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
