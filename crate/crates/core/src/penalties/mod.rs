//! Regularisation terms and their gradients with respect to raw weights.
//!
//! The training objective is
//! `task + λ·R_c + β·R_g (+ l1·Σ|w| + l2·Σw²)` where `R_g` is the group
//! lasso over channel and filter groups and `R_c` the angle-dissimilarity
//! penalty over channel vectors.

mod angle;
pub mod similarity;

use serde::{Deserialize, Serialize};

pub use angle::{ad_penalty_approx, ad_penalty_exact, ad_penalty_gradient, AdGradient};
pub use similarity::{angular_similarity, cosine_similarity, Metric};

use crate::error::{Error, Result};
use crate::grouping::channel_vectors;
use crate::nn::{Gradients, Layer, Network};
use crate::tensor::WeightTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdScope {
    ChannelsOnly,
    ChannelsAndFilters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdMode {
    /// All pairs, `O(c²)` per layer.
    Exact,
    /// Each vector against the layer's mean vector.
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// AD strength `λ`.
    pub lambda_ad: f64,
    /// Group-lasso strength `β`.
    pub beta_gl: f64,
    pub l1: f64,
    pub l2: f64,
    pub ad_scope: AdScope,
    pub ad_mode: AdMode,
    pub ad_metric: Metric,
    /// Groups and kernels at or below this norm are treated as zero.
    pub epsilon_norm: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            lambda_ad: 5e-3,
            beta_gl: 5e-3,
            l1: 0.0,
            l2: 0.0,
            ad_scope: AdScope::ChannelsOnly,
            ad_mode: AdMode::Exact,
            ad_metric: Metric::Angular,
            epsilon_norm: 1e-12,
        }
    }
}

impl PenaltyConfig {
    /// No regularisation at all.
    pub fn none() -> Self {
        PenaltyConfig {
            lambda_ad: 0.0,
            beta_gl: 0.0,
            ..PenaltyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_ad", self.lambda_ad),
            ("beta_gl", self.beta_gl),
            ("l1", self.l1),
            ("l2", self.l2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if !(self.epsilon_norm > 0.0 && self.epsilon_norm <= 1e-8) {
            return Err(Error::InvalidArgument(format!(
                "epsilon_norm must be in (0, 1e-8], got {}",
                self.epsilon_norm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPenalty {
    /// Index into the network's layer list.
    pub layer: usize,
    pub r_g: f64,
    pub r_c: f64,
}

/// Unscaled penalty terms of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBreakdown {
    pub r_g: f64,
    pub r_c: f64,
    /// `Σ|w|` over conv and dense weights.
    pub r_l1: f64,
    /// `Σw²` over conv and dense weights.
    pub r_l2: f64,
    pub layers: Vec<LayerPenalty>,
    /// Similarity terms evaluated under the zero-vector convention.
    pub degenerate_vectors: usize,
    /// Pairs whose angular gradient fell back to the cosine gradient.
    pub guarded_pairs: usize,
}

/// Group lasso of one layer: the L2 norms of every channel slice
/// `W_{i,·}` (`k·k·n` weights) plus every filter slice `W_{·,j}` (`k·k·c`
/// weights), with subgradient 0 for groups at or below `eps`.
pub fn group_lasso_layer(w: &WeightTensor, eps: f64) -> (f64, WeightTensor) {
    let s = w.shape();
    let mut ch_sq = vec![0.0; s.c];
    let mut f_sq = vec![0.0; s.n];
    for (idx, v) in w.values().iter().enumerate() {
        let sq = v * v;
        ch_sq[(idx / s.n) % s.c] += sq;
        f_sq[idx % s.n] += sq;
    }
    let ch: Vec<f64> = ch_sq.into_iter().map(f64::sqrt).collect();
    let fl: Vec<f64> = f_sq.into_iter().map(f64::sqrt).collect();
    let value = ch.iter().sum::<f64>() + fl.iter().sum::<f64>();
    let inv = |n: f64| if n > eps { 1.0 / n } else { 0.0 };
    let mut grad = WeightTensor::zeros(s);
    for (idx, (g, v)) in grad.values_mut().iter_mut().zip(w.values()).enumerate() {
        *g = v * (inv(ch[(idx / s.n) % s.c]) + inv(fl[idx % s.n]));
    }
    (value, grad)
}

/// Group lasso summed over layers.
pub fn group_lasso_penalty(ws: &[&WeightTensor], eps: f64) -> (f64, Vec<WeightTensor>) {
    let mut total = 0.0;
    let grads = ws
        .iter()
        .map(|w| {
            let (v, g) = group_lasso_layer(w, eps);
            total += v;
            g
        })
        .collect();
    (total, grads)
}

/// `task + λ·r_c + β·r_g + l1·r_l1 + l2·r_l2`.
pub fn total_loss(task_loss: f64, breakdown: &PenaltyBreakdown, cfg: &PenaltyConfig) -> f64 {
    task_loss
        + cfg.lambda_ad * breakdown.r_c
        + cfg.beta_gl * breakdown.r_g
        + cfg.l1 * breakdown.r_l1
        + cfg.l2 * breakdown.r_l2
}

fn dense_and_conv_weights(net: &Network) -> impl Iterator<Item = (usize, &[f64])> {
    net.layers()
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            Layer::Conv2d(c) => Some((i, c.weight.values())),
            Layer::Dense(d) => Some((i, d.weight.as_slice())),
            _ => None,
        })
}

/// Evaluates every penalty term of `net` without gradients.
pub fn penalty_breakdown(net: &Network, cfg: &PenaltyConfig) -> PenaltyBreakdown {
    let mut b = empty_breakdown(net);
    for (lp, layer) in b.layers.iter_mut().zip(net.conv_indices()) {
        let w = &net.conv(layer).expect("conv index").weight;
        lp.r_g = group_lasso_layer(w, cfg.epsilon_norm).0;
        let (r_c, degenerate) = angle::layer_value(
            &channel_vectors(layer, w),
            cfg.ad_scope,
            cfg.ad_mode,
            cfg.ad_metric,
            cfg.epsilon_norm,
        );
        lp.r_c = r_c;
        b.degenerate_vectors += degenerate;
    }
    b.r_g = b.layers.iter().map(|l| l.r_g).sum();
    b.r_c = b.layers.iter().map(|l| l.r_c).sum();
    b
}

fn empty_breakdown(net: &Network) -> PenaltyBreakdown {
    let (mut r_l1, mut r_l2) = (0.0, 0.0);
    for (_, w) in dense_and_conv_weights(net) {
        r_l1 += w.iter().map(|v| v.abs()).sum::<f64>();
        r_l2 += w.iter().map(|v| v * v).sum::<f64>();
    }
    PenaltyBreakdown {
        r_g: 0.0,
        r_c: 0.0,
        r_l1,
        r_l2,
        layers: net
            .conv_indices()
            .into_iter()
            .map(|layer| LayerPenalty {
                layer,
                r_g: 0.0,
                r_c: 0.0,
            })
            .collect(),
        degenerate_vectors: 0,
        guarded_pairs: 0,
    }
}

/// Adds the gradient of every configured penalty to `grads` and returns
/// the evaluated terms. Terms with zero strength are still evaluated for
/// reporting.
pub fn add_penalty_gradients(
    net: &Network,
    cfg: &PenaltyConfig,
    grads: &mut Gradients,
) -> PenaltyBreakdown {
    let convs = net.conv_indices();
    let weights = net.conv_weights();
    let mut b = empty_breakdown(net);

    let (_, gl_grads) = group_lasso_penalty(&weights, cfg.epsilon_norm);
    for ((lp, w), g) in b.layers.iter_mut().zip(&weights).zip(&gl_grads) {
        lp.r_g = group_lasso_layer(w, cfg.epsilon_norm).0;
        if cfg.beta_gl > 0.0 {
            grads.add_to_weight(lp.layer, g.values(), cfg.beta_gl);
        }
    }

    if cfg.lambda_ad > 0.0 {
        let ad = ad_penalty_gradient(&weights, cfg);
        for ((lp, v), g) in b.layers.iter_mut().zip(&ad.per_layer).zip(&ad.grads) {
            lp.r_c = *v;
            grads.add_to_weight(lp.layer, g.values(), cfg.lambda_ad);
        }
        b.degenerate_vectors = ad.degenerate;
        b.guarded_pairs = ad.guarded;
    } else {
        for (lp, &layer) in b.layers.iter_mut().zip(&convs) {
            let w = &net.conv(layer).expect("conv index").weight;
            let (v, d) = angle::layer_value(
                &channel_vectors(layer, w),
                cfg.ad_scope,
                cfg.ad_mode,
                cfg.ad_metric,
                cfg.epsilon_norm,
            );
            lp.r_c = v;
            b.degenerate_vectors += d;
        }
    }

    if cfg.l1 > 0.0 || cfg.l2 > 0.0 {
        for (layer, w) in dense_and_conv_weights(net) {
            let g: Vec<f64> = w
                .iter()
                .map(|&v| {
                    let sign = if v == 0.0 { 0.0 } else { v.signum() };
                    cfg.l1 * sign + 2.0 * cfg.l2 * v
                })
                .collect();
            grads.add_to_weight(layer, &g, 1.0);
        }
    }

    b.r_g = b.layers.iter().map(|l| l.r_g).sum();
    b.r_c = b.layers.iter().map(|l| l.r_c).sum();
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    #[test]
    fn group_lasso_of_zero_layer() {
        let w = WeightTensor::zeros(Shape4::new(3, 3, 2, 4).unwrap());
        let (v, g) = group_lasso_layer(&w, 1e-12);
        assert_eq!(v, 0.0);
        assert!(g.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn group_lasso_hand_example() {
        // channels × filters = [[3, 4], [0, 0]]
        let w = WeightTensor::from_vec(Shape4::new(1, 1, 2, 2).unwrap(), vec![3.0, 4.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(group_lasso_layer(&w, 1e-12).0, 12.0);
    }

    #[test]
    fn group_lasso_is_homogeneous() {
        let s = Shape4::new(3, 3, 3, 4).unwrap();
        let w =
            WeightTensor::from_vec(s, (0..s.len()).map(|i| (i as f64).cos()).collect()).unwrap();
        let mut scaled = w.clone();
        scaled.scale(2.5);
        let a = group_lasso_layer(&w, 1e-12).0;
        let b = group_lasso_layer(&scaled, 1e-12).0;
        assert!((b - 2.5 * a).abs() < 1e-12 * b);
    }

    #[test]
    fn total_loss_arithmetic() {
        let b = PenaltyBreakdown {
            r_g: 3.0,
            r_c: 2.0,
            r_l1: 0.0,
            r_l2: 0.0,
            layers: Vec::new(),
            degenerate_vectors: 0,
            guarded_pairs: 0,
        };
        let mut cfg = PenaltyConfig::none();
        assert_eq!(total_loss(1.0, &b, &cfg), 1.0);
        cfg.lambda_ad = 0.1;
        cfg.beta_gl = 0.01;
        let t = total_loss(1.0, &b, &cfg);
        assert!((t - 1.23).abs() < 1e-12);
        let mut doubled = cfg;
        doubled.lambda_ad *= 2.0;
        assert!((total_loss(1.0, &b, &doubled) - t - cfg.lambda_ad * b.r_c).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PenaltyConfig::default().validate().is_ok());
        let bad = PenaltyConfig {
            epsilon_norm: 1e-6,
            ..PenaltyConfig::default()
        };
        assert!(bad.validate().is_err());
        let neg = PenaltyConfig {
            beta_gl: -1.0,
            ..PenaltyConfig::default()
        };
        assert!(neg.validate().is_err());
    }
}
