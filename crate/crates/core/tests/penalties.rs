mod common;

use std::f64::consts::PI;

use common::*;
use dacp::grouping::channel_vectors;
use dacp::penalties::*;
use dacp::{Shape4, WeightTensor};
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-4;

/// Kernel Frobenius norms by explicit loops, rows = input channels.
fn norm_matrix(w: &WeightTensor) -> Vec<Vec<f64>> {
    let s = w.shape();
    (0..s.c)
        .map(|i| {
            (0..s.n)
                .map(|j| {
                    let mut sq = 0.0;
                    for y in 0..s.kh {
                        for x in 0..s.kw {
                            sq += w.get(y, x, i, j).powi(2);
                        }
                    }
                    sq.sqrt()
                })
                .collect()
        })
        .collect()
}

fn scalar_angular(a: &[f64], b: &[f64]) -> f64 {
    let (mut aa, mut bb) = (0.0, 0.0);
    for k in 0..a.len() {
        aa += a[k] * a[k];
        bb += b[k] * b[k];
    }
    if aa.sqrt() <= 1e-12 || bb.sqrt() <= 1e-12 {
        return 0.5;
    }
    // half-angle form: acos of a cosine rounded near ±1 loses ~1e-8
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    let (mut diff, mut sum) = (0.0, 0.0);
    for k in 0..a.len() {
        diff += (a[k] / na - b[k] / nb).powi(2);
        sum += (a[k] / na + b[k] / nb).powi(2);
    }
    1.0 - 2.0 * diff.sqrt().atan2(sum.sqrt()) / PI
}

fn brute_exact(w: &WeightTensor) -> f64 {
    let m = norm_matrix(w);
    let mut total = 0.0;
    for i in 0..m.len() {
        for j in 0..m.len() {
            if i < j {
                total += scalar_angular(&m[i], &m[j]);
            }
        }
    }
    total
}

fn brute_approx(w: &WeightTensor) -> f64 {
    let m = norm_matrix(w);
    let n = m[0].len();
    let base: Vec<f64> = (0..n)
        .map(|j| m.iter().map(|row| row[j]).sum::<f64>() / m.len() as f64)
        .collect();
    m.iter().map(|row| scalar_angular(row, &base)).sum()
}

fn random_layer(
    r: &mut rand_chacha::ChaCha8Rng,
    max_k: usize,
    max_c: usize,
    max_n: usize,
) -> WeightTensor {
    let k = r.random_range(1..=max_k);
    let c = r.random_range(2..=max_c);
    let n = r.random_range(1..=max_n);
    weights(r, k, k, c, n)
}

#[test]
fn exact_penalty_matches_pair_enumeration() {
    let mut r = rng(20);
    for _ in 0..100 {
        let w = random_layer(&mut r, 3, 8, 8);
        let got = ad_penalty_exact(&[channel_vectors(0, &w)], AdScope::ChannelsOnly);
        assert!((got - brute_exact(&w)).abs() < 1e-12);
    }
}

#[test]
fn approx_penalty_matches_row_loop() {
    let mut r = rng(21);
    for _ in 0..100 {
        let w = random_layer(&mut r, 3, 8, 8);
        let got = ad_penalty_approx(&[channel_vectors(0, &w)], AdScope::ChannelsOnly);
        assert!((got - brute_approx(&w)).abs() < 1e-12);
    }
}

#[test]
fn six_channel_examples() {
    let mut r = rng(22);
    let w = weights(&mut r, 3, 3, 6, 5);
    let cv = channel_vectors(0, &w);
    assert!(
        (ad_penalty_exact(std::slice::from_ref(&cv), AdScope::ChannelsOnly) - brute_exact(&w))
            .abs()
            < 1e-12
    );
    assert!((ad_penalty_approx(&[cv], AdScope::ChannelsOnly) - brute_approx(&w)).abs() < 1e-12);
}

#[test]
fn group_lasso_hand_example() {
    let w =
        WeightTensor::from_vec(Shape4::new(1, 1, 2, 2).unwrap(), vec![3.0, 4.0, 0.0, 0.0]).unwrap();
    let (value, grad) = group_lasso_layer(&w, 1e-12);
    assert_eq!(value, 12.0);
    // channel 1 is a zero group: only the filter groups pull on it
    assert_eq!(grad.values()[2], 0.0);
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        out[i] = rank as f64;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn exact_and_approx_rank_correlate() {
    let mut r = rng(23);
    let (mut exact, mut approx) = (Vec::new(), Vec::new());
    for _ in 0..100 {
        // fixed channel count so both penalties share a scale; a per-layer
        // spread keeps the similarity levels varied
        let mut w = weights(&mut r, 3, 3, 6, 6);
        let spread = r.random_range(0.0..3.0);
        let shared = uniform(&mut r, 9 * 6);
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..6 {
                    for f in 0..6 {
                        let v = w.get(y, x, c, f) * spread + shared[(y * 3 + x) * 6 + f];
                        w.set(y, x, c, f, v);
                    }
                }
            }
        }
        let cv = channel_vectors(0, &w);
        exact.push(ad_penalty_exact(
            std::slice::from_ref(&cv),
            AdScope::ChannelsOnly,
        ));
        approx.push(ad_penalty_approx(&[cv], AdScope::ChannelsOnly));
    }
    let rho = pearson(&ranks(&exact), &ranks(&approx));
    assert!(rho >= 0.9, "spearman {rho}");
}

fn check_ad_gradient(w: &WeightTensor, scope: AdScope, mode: AdMode) -> f64 {
    let cfg = PenaltyConfig {
        ad_scope: scope,
        ad_mode: mode,
        ..PenaltyConfig::default()
    };
    let g = ad_penalty_gradient(&[w], &cfg);
    assert_eq!(g.guarded, 0);
    let n = numeric_gradient(w.values(), H, |v| {
        let probe = WeightTensor::from_vec(w.shape(), v.to_vec()).unwrap();
        ad_penalty_gradient(&[&probe], &cfg).value
    });
    max_relative_error(g.grads[0].values(), &n)
}

/// A random layer whose kernel norms all sit well clear of the
/// difference step, where `‖·‖` has its kink. A single filter makes every
/// channel vector parallel, where the angle itself has a kink.
fn smooth_layer(r: &mut rand_chacha::ChaCha8Rng) -> WeightTensor {
    loop {
        let w = random_layer(r, 3, 8, 8);
        if w.shape().n >= 2 && channel_vectors(0, &w).matrix.iter().all(|&v| v > 1e-2) {
            return w;
        }
    }
}

#[test]
fn ad_gradients_match_finite_differences() {
    let mut r = rng(24);
    for i in 0..20 {
        let w = smooth_layer(&mut r);
        for scope in [AdScope::ChannelsOnly, AdScope::ChannelsAndFilters] {
            for mode in [AdMode::Exact, AdMode::Approximate] {
                let err = check_ad_gradient(&w, scope, mode);
                assert!(err <= 1e-5, "layer {i} {scope:?} {mode:?}: {err}");
            }
        }
    }
}

#[test]
fn spec_sized_ad_gradient() {
    let mut r = rng(25);
    let w = weights(&mut r, 3, 3, 4, 5);
    assert!(check_ad_gradient(&w, AdScope::ChannelsOnly, AdMode::Exact) <= 1e-5);
}

#[test]
fn group_lasso_gradients_match_finite_differences() {
    let mut r = rng(26);
    for _ in 0..20 {
        let w = random_layer(&mut r, 3, 8, 8);
        let (_, g) = group_lasso_layer(&w, 1e-12);
        let n = numeric_gradient(w.values(), H, |v| {
            group_lasso_layer(
                &WeightTensor::from_vec(w.shape(), v.to_vec()).unwrap(),
                1e-12,
            )
            .0
        });
        assert!(max_relative_error(g.values(), &n) <= 1e-5);
    }
}

#[test]
fn group_lasso_gradient_ignores_zero_groups() {
    // channel 0 is zero; the remaining groups still differentiate cleanly
    let mut r = rng(27);
    let mut w = weights(&mut r, 3, 3, 3, 4);
    for y in 0..3 {
        for x in 0..3 {
            for f in 0..4 {
                w.set(y, x, 0, f, 0.0);
            }
        }
    }
    let (_, g) = group_lasso_layer(&w, 1e-12);
    let live: Vec<usize> = (0..w.values().len()).filter(|i| (i / 4) % 3 != 0).collect();
    let n = numeric_gradient(w.values(), H, |v| {
        group_lasso_layer(
            &WeightTensor::from_vec(w.shape(), v.to_vec()).unwrap(),
            1e-12,
        )
        .0
    });
    let a: Vec<f64> = live.iter().map(|&i| g.values()[i]).collect();
    let nl: Vec<f64> = live.iter().map(|&i| n[i]).collect();
    assert!(max_relative_error(&a, &nl) <= 1e-5);
}

fn layer_strategy() -> impl Strategy<Value = WeightTensor> {
    (1usize..=3, 1usize..=6, 1usize..=6).prop_flat_map(|(k, c, n)| {
        prop::collection::vec(-2.0f64..2.0, k * k * c * n)
            .prop_map(move |v| WeightTensor::from_vec(Shape4::new(k, k, c, n).unwrap(), v).unwrap())
    })
}

proptest! {
    #[test]
    fn exact_penalty_is_bounded(layers in prop::collection::vec(layer_strategy(), 1..4)) {
        let cvs: Vec<_> = layers.iter().enumerate().map(|(l, w)| channel_vectors(l, w)).collect();
        let value = ad_penalty_exact(&cvs, AdScope::ChannelsOnly);
        let bound: f64 = layers.iter().map(|w| {
            let c = w.shape().c as f64;
            c * (c - 1.0) / 2.0
        }).sum();
        prop_assert!(value >= 0.0 && value <= bound + 1e-9);
    }

    #[test]
    fn group_lasso_is_positively_homogeneous(w in layer_strategy(), k in 0.01f64..10.0) {
        let (v, g) = group_lasso_layer(&w, 1e-12);
        let mut scaled = w.clone();
        scaled.scale(k);
        let (vs, _) = group_lasso_layer(&scaled, 1e-12);
        prop_assert!((vs - k * v).abs() <= 1e-9 * (1.0 + vs.abs()));

        // each non-zero group's own gradient has unit norm
        let s = w.shape();
        for ch in 0..s.c {
            let idx: Vec<usize> = (0..s.len()).filter(|i| (i / s.n) % s.c == ch).collect();
            let norm = idx.iter().map(|&i| w.values()[i].powi(2)).sum::<f64>().sqrt();
            if norm > 1e-6 {
                let own = idx.iter().map(|&i| (w.values()[i] / norm).powi(2)).sum::<f64>().sqrt();
                prop_assert!((own - 1.0).abs() < 1e-12);
            }
        }
        prop_assert_eq!(g.values().len(), s.len());
    }

    #[test]
    fn identical_channels_reach_the_maximum(row in prop::collection::vec(0.1f64..3.0, 1..6), c in 2usize..8) {
        let n = row.len();
        let mut v = Vec::with_capacity(c * n);
        for _ in 0..c {
            v.extend_from_slice(&row);
        }
        let w = WeightTensor::from_vec(Shape4::new(1, 1, c, n).unwrap(), v).unwrap();
        let cv = channel_vectors(0, &w);
        let c = c as f64;
        prop_assert!((ad_penalty_exact(std::slice::from_ref(&cv), AdScope::ChannelsOnly) - c * (c - 1.0) / 2.0).abs() < 1e-9);
        prop_assert!((ad_penalty_approx(&[cv], AdScope::ChannelsOnly) - c).abs() < 1e-9);
    }
}
