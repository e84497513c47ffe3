mod common;

use std::collections::BTreeSet;

use common::*;
use dacp::nn::NetworkBuilder;
use dacp::pruning::*;
use dacp::{Arch, Dims, Layer, Network};
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_biases(net: &mut Network, r: &mut ChaCha8Rng) {
    for l in net.layers_mut() {
        if let Layer::Dense(d) = l {
            d.bias = uniform(r, d.outputs);
        }
    }
}

fn random_toy_net(r: &mut ChaCha8Rng) -> (Network, Dims) {
    let input = Dims::new(
        2 * r.random_range(2..5),
        2 * r.random_range(2..5),
        r.random_range(1..4),
    );
    let mut b = NetworkBuilder::new(input, r.random());
    b.conv(3, r.random_range(2..7)).unwrap().relu().maxpool();
    b.conv(r.random_range(1..4), r.random_range(2..7))
        .unwrap()
        .relu();
    if r.random_bool(0.5) {
        let skip = b.node();
        let width = b.dims().c;
        b.conv(3, width).unwrap().residual_add(skip);
    }
    b.flatten().dense(r.random_range(2..5)).unwrap();
    let mut net = b.finish().unwrap();
    random_biases(&mut net, r);
    (net, input)
}

fn random_plan(net: &Network, r: &mut ChaCha8Rng) -> PrunePlan {
    let mut plan = compute_prune_plan(net, 0.0).unwrap();
    for p in &mut plan.layers {
        let keep = r.random_range(1..=p.filters);
        let mut kept = sample(r, p.filters, keep).into_vec();
        kept.sort_unstable();
        p.keep_filters = kept;
    }
    resnet_union_adjust(&plan, net)
}

#[test]
fn pruned_logits_equal_masked_logits() {
    let mut r = rng(40);
    for case in 0..50 {
        let (net, input) = random_toy_net(&mut r);
        let plan = random_plan(&net, &mut r);
        let masked = mask_filters(&net, &plan).unwrap();
        let pruned = apply_prune(&masked, &plan).unwrap();
        for _ in 0..10 {
            let x = map(&mut r, 1, input.h, input.w, input.c);
            let a = masked.logits(&x).unwrap();
            let b = pruned.logits(&x).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                assert!((u - v).abs() <= 1e-12, "case {case}");
            }
        }
    }
}

#[test]
fn zeroed_filter_example() {
    let mut r = rng(41);
    let mut b = NetworkBuilder::new(Dims::new(4, 4, 1), 2);
    b.conv(3, 2).unwrap().relu().flatten().dense(3).unwrap();
    let mut net = b.finish().unwrap();
    random_biases(&mut net, &mut r);
    if let Layer::Conv2d(c) = &mut net.layers_mut()[0] {
        for v in c.weight.values_mut().iter_mut().step_by(2) {
            *v = 0.0;
        }
    }
    let plan = compute_prune_plan(&net, 0.1).unwrap();
    assert_eq!(plan.layers[0].keep_filters, vec![1]);
    let pruned = apply_prune(&net, &plan).unwrap();
    let x = map(&mut r, 3, 4, 4, 1);
    let (a, b) = (net.logits(&x).unwrap(), pruned.logits(&x).unwrap());
    for (u, v) in a.values.iter().zip(&b.values) {
        assert!((u - v).abs() <= 1e-12);
    }
}

/// Conv layers whose outputs reach `node` without passing another conv.
fn feeders(net: &Network, node: usize, out: &mut BTreeSet<Option<usize>>) {
    if node == 0 {
        out.insert(None);
        return;
    }
    let layer = node - 1;
    match &net.layers()[layer] {
        Layer::Conv2d(_) => {
            out.insert(Some(layer));
        }
        Layer::ResidualAdd { from } => {
            feeders(net, layer, out);
            feeders(net, *from, out);
        }
        _ => feeders(net, layer, out),
    }
}

/// Brute-force propagation: widen keep sets at every sum until nothing
/// changes.
fn propagate(net: &Network, plan: &PrunePlan) -> Vec<Vec<usize>> {
    let mut keep: Vec<BTreeSet<usize>> = plan
        .layers
        .iter()
        .map(|p| p.keep_filters.iter().copied().collect())
        .collect();
    let pos = |l: usize| plan.layers.iter().position(|p| p.layer == l).unwrap();
    loop {
        let mut changed = false;
        for (i, l) in net.layers().iter().enumerate() {
            let Layer::ResidualAdd { from } = l else {
                continue;
            };
            let mut fs = BTreeSet::new();
            feeders(net, i, &mut fs);
            feeders(net, *from, &mut fs);
            let convs: Vec<usize> = fs.iter().flatten().map(|&l| pos(l)).collect();
            let target: BTreeSet<usize> = if fs.contains(&None) {
                (0..plan.layers[convs[0]].filters).collect()
            } else {
                convs
                    .iter()
                    .flat_map(|&k| keep[k].iter().copied())
                    .collect()
            };
            for k in convs {
                if keep[k] != target {
                    keep[k] = target.clone();
                    changed = true;
                }
            }
        }
        if !changed {
            return keep.into_iter().map(|s| s.into_iter().collect()).collect();
        }
    }
}

fn three_block_net(seed: u64) -> Network {
    let mut b = NetworkBuilder::new(Dims::new(6, 6, 2), seed);
    b.conv(3, 6).unwrap().relu();
    for _ in 0..3 {
        let skip = b.node();
        b.conv(3, 6)
            .unwrap()
            .relu()
            .conv(3, 6)
            .unwrap()
            .residual_add(skip)
            .relu();
    }
    b.flatten().dense(2).unwrap();
    b.finish().unwrap()
}

#[test]
fn union_matches_propagation_oracle() {
    let mut r = rng(42);
    for net in [
        three_block_net(1),
        Arch::ResnetMini.build(Dims::new(8, 8, 1), 2, 0).unwrap(),
    ] {
        for _ in 0..50 {
            let mut plan = compute_prune_plan(&net, 0.0).unwrap();
            for p in &mut plan.layers {
                let keep = r.random_range(1..=p.filters);
                let mut kept = sample(&mut r, p.filters, keep).into_vec();
                kept.sort_unstable();
                p.keep_filters = kept;
            }
            let adjusted = resnet_union_adjust(&plan, &net);
            let expect = propagate(&net, &plan);
            for (p, e) in adjusted.layers.iter().zip(&expect) {
                assert_eq!(&p.keep_filters, e, "layer {}", p.layer);
            }
            for (_, a, b) in adjusted.residual_operand_channels(&net) {
                assert_eq!(a, b);
            }
            adjusted.validate(&net).unwrap();
            apply_prune(&net, &adjusted).unwrap();
        }
    }
}

#[test]
fn union_literal_example() {
    let a: BTreeSet<usize> = [1, 3].into();
    let b: BTreeSet<usize> = [2, 3].into();
    assert_eq!(a.union(&b).copied().collect::<Vec<_>>(), vec![1, 2, 3]);

    let net = three_block_net(2);
    let mut plan = compute_prune_plan(&net, 0.0).unwrap();
    let convs = net.conv_indices();
    // stem feeds the first sum together with block 1's second conv; the
    // chained sums then pull in blocks 2 and 3
    for p in &mut plan.layers {
        p.keep_filters = if p.layer == convs[0] {
            vec![1, 3]
        } else if p.layer == convs[2] {
            vec![2, 3]
        } else if p.layer == convs[4] || p.layer == convs[6] {
            vec![3]
        } else {
            p.keep_filters.clone()
        };
    }
    let adjusted = resnet_union_adjust(&plan, &net);
    for l in [convs[0], convs[2], convs[4], convs[6]] {
        assert_eq!(adjusted.kept_filters(l).unwrap(), &[1, 2, 3]);
    }
}

/// vgg-mini with filter norms spread over two orders of magnitude.
fn spread_vgg(seed: u64) -> Network {
    let mut r = rng(seed);
    let mut net = Arch::VggMini.build(Dims::new(8, 8, 1), 4, seed).unwrap();
    for l in net.layers_mut() {
        if let Layer::Conv2d(c) = l {
            let n = c.weight.shape().n;
            let scales: Vec<f64> = (0..n)
                .map(|_| 10f64.powf(r.random_range(-2.0..0.0)))
                .collect();
            for (i, v) in c.weight.values_mut().iter_mut().enumerate() {
                *v *= scales[i % n];
            }
        }
    }
    net
}

fn pruned_pct(net: &Network, tau: f64) -> f64 {
    let plan = compute_prune_plan(net, tau).unwrap();
    let pruned = apply_prune(net, &plan).unwrap();
    FlopsReport::compare(net, &pruned, (8, 8))
        .unwrap()
        .pruned_flops_pct
}

#[test]
fn pruned_flops_monotone_in_tau_on_vgg_mini() {
    for seed in 0..5 {
        let net = spread_vgg(seed);
        let mut last = -1.0;
        for step in 0..20 {
            let pct = pruned_pct(&net, step as f64 * 0.05);
            assert!(pct >= last, "seed {seed} tau {}", step as f64 * 0.05);
            last = pct;
        }
        assert!(last > 0.0);
    }
}

#[test]
fn tau_zero_is_identity() {
    for arch in [Arch::ToyCnn, Arch::VggMini, Arch::ResnetMini] {
        let net = arch.build(Dims::new(8, 8, 1), 3, 7).unwrap();
        let plan = resnet_union_adjust(&compute_prune_plan(&net, 0.0).unwrap(), &net);
        assert_eq!(apply_prune(&net, &plan).unwrap(), net);
        assert_eq!(pruned_pct(&net, 0.0), 0.0);
    }
}

#[test]
fn conv_flops_formula() {
    let mut b = NetworkBuilder::new(Dims::new(32, 32, 3), 0);
    b.conv(3, 64).unwrap();
    let net = b.finish().unwrap();
    let costs = count_flops(&net, (32, 32)).unwrap();
    assert_eq!(costs[0].flops, 2 * 27 * 64 * 1024);
    assert_eq!(costs[0].flops, 3_538_944);
    assert_eq!(costs[0].params, 27 * 64);
}

#[test]
fn summary_line_format() {
    let net = spread_vgg(3);
    let plan = compute_prune_plan(&net, 0.5).unwrap();
    let report = FlopsReport::compare(&net, &apply_prune(&net, &plan).unwrap(), (8, 8)).unwrap();
    let s = report.summary(93.31);
    assert!(
        s.starts_with("Pruned FLOPs ") && s.ends_with(", accuracy 93.31%"),
        "{s}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn union_always_aligns_sums(seed in any::<u64>()) {
        let net = Arch::ResnetMini.build(Dims::new(8, 8, 1), 2, seed).unwrap();
        let mut r = rng(seed);
        let plan = random_plan(&net, &mut r);
        for (_, a, b) in plan.residual_operand_channels(&net) {
            prop_assert_eq!(a, b);
        }
        prop_assert!(apply_prune(&net, &plan).is_ok());
    }

    #[test]
    fn prune_never_increases_cost(seed in any::<u64>(), tau in 0.0f64..0.99) {
        let net = spread_vgg(seed % 1000);
        let plan = compute_prune_plan(&net, tau).unwrap();
        let pruned = apply_prune(&net, &plan).unwrap();
        let report = FlopsReport::compare(&net, &pruned, (8, 8)).unwrap();
        prop_assert!(report.total_flops_after <= report.total_flops_before);
        prop_assert!(report.total_params_after <= report.total_params_before);
        prop_assert!((0.0..100.0).contains(&report.pruned_flops_pct));
    }
}
