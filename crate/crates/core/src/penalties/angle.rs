//! Angle-dissimilarity penalty over channel (and optionally filter) vectors.

use serde::{Deserialize, Serialize};

use super::similarity::{self, cosine_checked, cosine_gradient, Metric};
use super::{AdMode, AdScope, PenaltyConfig};
use crate::grouping::{channel_vectors, Axis, ChannelVectorSet};
use crate::tensor::WeightTensor;

/// Value of the AD penalty on one set of vectors plus its gradient with
/// respect to each vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct VectorTerm {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
    pub degenerate: usize,
    pub guarded: usize,
}

fn zeros(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    vs.iter().map(|v| vec![0.0; v.len()]).collect()
}

fn axpy(acc: &mut [f64], k: f64, x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += k * b;
    }
}

/// `Σ_{i<j} metric(v_i, v_j)` and its gradient.
pub(crate) fn pairwise_term(
    vs: &[Vec<f64>],
    metric: Metric,
    eps: f64,
    want_grad: bool,
) -> VectorTerm {
    let mut t = VectorTerm {
        grads: if want_grad { zeros(vs) } else { Vec::new() },
        ..VectorTerm::default()
    };
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let Some(f) = cosine_checked(&vs[i], &vs[j], eps) else {
                t.value += similarity::degenerate_value(metric);
                t.degenerate += 1;
                continue;
            };
            t.value += similarity::pair_value(metric, &vs[i], &vs[j], f, eps);
            if want_grad {
                let (slope, guarded) = similarity::metric_slope(metric, f);
                t.guarded += guarded as usize;
                let gi = cosine_gradient(&vs[i], &vs[j], eps);
                let gj = cosine_gradient(&vs[j], &vs[i], eps);
                axpy(&mut t.grads[i], slope, &gi);
                axpy(&mut t.grads[j], slope, &gj);
            }
        }
    }
    t
}

/// `Σ_i metric(v_i, B)` with `B` the mean vector, and its gradient
/// (including the dependence of `B` on every `v_k`).
pub(crate) fn base_vector_term(
    vs: &[Vec<f64>],
    metric: Metric,
    eps: f64,
    want_grad: bool,
) -> VectorTerm {
    let m = vs.len();
    let mut t = VectorTerm {
        grads: if want_grad { zeros(vs) } else { Vec::new() },
        ..VectorTerm::default()
    };
    if m == 0 {
        return t;
    }
    let dim = vs[0].len();
    let mut base = vec![0.0; dim];
    for v in vs {
        axpy(&mut base, 1.0, v);
    }
    base.iter_mut().for_each(|b| *b /= m as f64);

    let mut grad_base = vec![0.0; dim];
    for (i, v) in vs.iter().enumerate() {
        let Some(f) = cosine_checked(v, &base, eps) else {
            t.value += similarity::degenerate_value(metric);
            t.degenerate += 1;
            continue;
        };
        t.value += similarity::pair_value(metric, v, &base, f, eps);
        if want_grad {
            let (slope, guarded) = similarity::metric_slope(metric, f);
            t.guarded += guarded as usize;
            axpy(&mut t.grads[i], slope, &cosine_gradient(v, &base, eps));
            axpy(&mut grad_base, slope, &cosine_gradient(&base, v, eps));
        }
    }
    if want_grad {
        let share = 1.0 / m as f64;
        for g in &mut t.grads {
            axpy(g, share, &grad_base);
        }
    }
    t
}

fn term(vs: &[Vec<f64>], mode: AdMode, metric: Metric, eps: f64, want_grad: bool) -> VectorTerm {
    if vs.len() < 2 {
        return VectorTerm {
            grads: if want_grad { zeros(vs) } else { Vec::new() },
            ..VectorTerm::default()
        };
    }
    match mode {
        AdMode::Exact => pairwise_term(vs, metric, eps, want_grad),
        AdMode::Approximate => base_vector_term(vs, metric, eps, want_grad),
    }
}

fn axes(scope: AdScope) -> &'static [Axis] {
    match scope {
        AdScope::ChannelsOnly => &[Axis::Channels],
        AdScope::ChannelsAndFilters => &[Axis::Channels, Axis::Filters],
    }
}

/// AD value of one layer's norm matrix.
pub(crate) fn layer_value(
    cv: &ChannelVectorSet,
    scope: AdScope,
    mode: AdMode,
    metric: Metric,
    eps: f64,
) -> (f64, usize) {
    axes(scope).iter().fold((0.0, 0), |(v, d), &axis| {
        let t = term(&cv.vectors(axis), mode, metric, eps, false);
        (v + t.value, d + t.degenerate)
    })
}

/// Pairwise penalty `Σ_l Σ_{i<j} S(X_i, X_j)`, plus the same sum over
/// filter vectors when `scope` includes filters.
pub fn ad_penalty_exact(cvs: &[ChannelVectorSet], scope: AdScope) -> f64 {
    cvs.iter()
        .map(|cv| {
            layer_value(
                cv,
                scope,
                AdMode::Exact,
                Metric::Angular,
                similarity::ZERO_NORM,
            )
            .0
        })
        .sum()
}

/// Base-vector penalty `Σ_l Σ_i S(X_i, B^l)` with `B^l` the mean channel
/// vector of layer `l`.
pub fn ad_penalty_approx(cvs: &[ChannelVectorSet], scope: AdScope) -> f64 {
    cvs.iter()
        .map(|cv| {
            layer_value(
                cv,
                scope,
                AdMode::Approximate,
                Metric::Angular,
                similarity::ZERO_NORM,
            )
            .0
        })
        .sum()
}

/// Result of [`ad_penalty_gradient`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdGradient {
    pub value: f64,
    pub per_layer: Vec<f64>,
    pub grads: Vec<WeightTensor>,
    /// Pairs scored under the zero-vector convention.
    pub degenerate: usize,
    /// Pairs whose acos factor was replaced near `|cos| = 1`.
    pub guarded: usize,
}

/// Gradient of the configured AD penalty with respect to raw kernel
/// weights.
///
/// The vector-level gradient is pulled back through the kernel norms
/// `X_i[j] = ‖W_{i,j}‖_F`, whose derivative is `W_{i,j} / ‖W_{i,j}‖_F`
/// (zero for kernels at or below `epsilon_norm`).
pub fn ad_penalty_gradient(ws: &[&WeightTensor], cfg: &PenaltyConfig) -> AdGradient {
    let eps = cfg.epsilon_norm;
    let mut out = AdGradient {
        value: 0.0,
        per_layer: Vec::with_capacity(ws.len()),
        grads: Vec::with_capacity(ws.len()),
        degenerate: 0,
        guarded: 0,
    };
    for (l, w) in ws.iter().enumerate() {
        let cv = channel_vectors(l, w);
        let (c, n) = (cv.channels, cv.filters);
        // gradient with respect to the c×n norm matrix
        let mut gm = vec![0.0; c * n];
        let mut layer_value = 0.0;
        for &axis in axes(cfg.ad_scope) {
            let t = term(&cv.vectors(axis), cfg.ad_mode, cfg.ad_metric, eps, true);
            layer_value += t.value;
            out.degenerate += t.degenerate;
            out.guarded += t.guarded;
            for (k, g) in t.grads.iter().enumerate() {
                for (m, gv) in g.iter().enumerate() {
                    let (i, j) = match axis {
                        Axis::Channels => (k, m),
                        Axis::Filters => (m, k),
                    };
                    gm[i * n + j] += gv;
                }
            }
        }
        let mut gw = WeightTensor::zeros(w.shape());
        for i in 0..c {
            for j in 0..n {
                let norm = cv.get(i, j);
                let g = gm[i * n + j];
                if norm <= eps || g == 0.0 {
                    continue;
                }
                for off in w.kernel_offsets(i, j) {
                    gw.values_mut()[off] = g * w.values()[off] / norm;
                }
            }
        }
        out.value += layer_value;
        out.per_layer.push(layer_value);
        out.grads.push(gw);
    }
    out
}
