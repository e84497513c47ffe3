//! Cosine and angular similarity between real vectors.
//!
//! Zero-vector convention: when either vector has norm at most the zero
//! threshold the pair is treated as orthogonal, giving cosine 0, angular
//! similarity 0.5 and a zero gradient.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Norm at or below which a vector counts as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Past this `|cos|` the acos derivative is not used.
pub const SATURATION: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `cos θ`.
    Cosine,
    /// `1 − θ/π`.
    Angular,
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `a·b / (‖a‖‖b‖)` clamped to `[-1, 1]`, or `None` for a zero vector.
pub fn cosine_checked(a: &[f64], b: &[f64], eps: f64) -> Option<f64> {
    assert_eq!(
        a.len(),
        b.len(),
        "similarity of vectors with different lengths"
    );
    let (na, nb) = (norm(a), norm(b));
    if na <= eps || nb <= eps {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine_checked(a, b, ZERO_NORM).unwrap_or(0.0)
}

/// Maps a cosine to angular similarity, `1 − acos(f)/π`.
pub fn angular_from_cosine(f: f64) -> f64 {
    1.0 - f.clamp(-1.0, 1.0).acos() / PI
}

/// Angle between `a` and `b` as `2·atan2(‖â − b̂‖, ‖â + b̂‖)`, which stays
/// accurate near 0 and π where `acos` of a rounded cosine does not.
pub fn angle_checked(a: &[f64], b: &[f64], eps: f64) -> Option<f64> {
    assert_eq!(
        a.len(),
        b.len(),
        "similarity of vectors with different lengths"
    );
    let (na, nb) = (norm(a), norm(b));
    if na <= eps || nb <= eps {
        return None;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

pub fn angular_similarity(a: &[f64], b: &[f64]) -> f64 {
    angle_checked(a, b, ZERO_NORM).map_or(0.5, |t| 1.0 - t / PI)
}

/// Metric value for a non-degenerate pair whose cosine is `f`.
pub fn pair_value(metric: Metric, a: &[f64], b: &[f64], f: f64, eps: f64) -> f64 {
    match metric {
        Metric::Cosine => f,
        Metric::Angular => angle_checked(a, b, eps).map_or(0.5, |t| 1.0 - t / PI),
    }
}

pub fn similarity(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Cosine => cosine_similarity(a, b),
        Metric::Angular => angular_similarity(a, b),
    }
}

/// Value of the metric at cosine `f`.
pub fn metric_value(metric: Metric, f: f64) -> f64 {
    match metric {
        Metric::Cosine => f,
        Metric::Angular => angular_from_cosine(f),
    }
}

/// Value of the metric for a zero-vector pair.
pub fn degenerate_value(metric: Metric) -> f64 {
    metric_value(metric, 0.0)
}

/// `d metric / d f`, with the guard flag set when the acos factor was
/// replaced by 1 near `|f| = 1`.
pub fn metric_slope(metric: Metric, f: f64) -> (f64, bool) {
    match metric {
        Metric::Cosine => (1.0, false),
        Metric::Angular if f.abs() >= SATURATION => (1.0, true),
        Metric::Angular => (1.0 / (PI * (1.0 - f * f).sqrt()), false),
    }
}

/// `∂ cos(a, b) / ∂a = b/(‖a‖‖b‖) − f·a/‖a‖²`.
///
/// Returns zeros under the zero-vector convention.
pub fn cosine_gradient(a: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na <= eps || nb <= eps {
        return vec![0.0; a.len()];
    }
    let f = dot(a, b) / (na * nb);
    let inv = 1.0 / (na * nb);
    let fa = f / (na * na);
    a.iter().zip(b).map(|(ai, bi)| bi * inv - fa * ai).collect()
}
