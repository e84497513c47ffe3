mod common;

use common::*;
use dacp::harness::checkpoint::{decode, encode};
use dacp::harness::dataset::{parse_cifar, parse_idx, synthetic};
use dacp::harness::*;
use dacp::pruning::{apply_prune, compute_prune_plan};
use dacp::{Arch, Dims, Error, Layer, Network};
use std::path::Path;

fn quick_config() -> ExperimentConfig {
    ExperimentConfig {
        epochs: 4,
        train_size: 96,
        test_size: 64,
        ..ExperimentConfig::default()
    }
}

/// Rounds every parameter to the nearest `f32`.
fn to_f32_grid(net: &Network) -> Network {
    let mut out = net.clone();
    for l in out.layers_mut() {
        match l {
            Layer::Conv2d(c) => c
                .weight
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = *v as f32 as f64),
            Layer::Dense(d) => {
                d.weight.iter_mut().for_each(|v| *v = *v as f32 as f64);
                d.bias.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
            _ => {}
        }
    }
    out
}

#[test]
fn checkpoint_round_trips_every_arch() {
    let dir = tempfile::tempdir().unwrap();
    for arch in [Arch::ToyCnn, Arch::VggMini, Arch::ResnetMini] {
        let net = to_f32_grid(&arch.build(Dims::new(8, 8, 1), 10, 1).unwrap());
        let path = dir.path().join(format!("{arch}.ckpt"));
        save_checkpoint(&net, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, net);
        assert_eq!(encode(&loaded).unwrap(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn save_load_save_is_byte_identical_for_f64_nets() {
    let net = Arch::ResnetMini.build(Dims::new(8, 8, 3), 4, 2).unwrap();
    let first = encode(&net).unwrap();
    let second = encode(&decode(&first).unwrap()).unwrap();
    assert_eq!(first, second);
}

#[test]
fn pruned_checkpoint_keeps_shrunk_shapes() {
    let mut r = rng(60);
    let mut net = Arch::ToyCnn.build(Dims::new(8, 8, 1), 2, 3).unwrap();
    if let Layer::Conv2d(c) = &mut net.layers_mut()[0] {
        let n = c.weight.shape().n;
        for (i, v) in c.weight.values_mut().iter_mut().enumerate() {
            if i % n < 3 {
                *v *= 1e-3;
            }
        }
    }
    let pruned = to_f32_grid(&apply_prune(&net, &compute_prune_plan(&net, 0.5).unwrap()).unwrap());
    let loaded = decode(&encode(&pruned).unwrap()).unwrap();
    let shapes = |n: &Network| -> Vec<(usize, usize, usize, usize)> {
        n.conv_weights()
            .iter()
            .map(|w| {
                let s = w.shape();
                (s.kh, s.kw, s.c, s.n)
            })
            .collect()
    };
    assert_eq!(shapes(&loaded), shapes(&pruned));
    assert_eq!(shapes(&loaded)[0].3, 5);
    assert_eq!(shapes(&loaded)[1].2, 5);
    let x = map(&mut r, 2, 8, 8, 1);
    assert_eq!(loaded.logits(&x).unwrap(), pruned.logits(&x).unwrap());
}

#[test]
fn corrupt_checkpoints_give_distinct_errors() {
    let bytes = encode(&Arch::ToyCnn.build(Dims::new(8, 8, 1), 2, 0).unwrap()).unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(decode(&bad_magic), Err(Error::BadMagic { .. })));
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(matches!(
        decode(&bad_version),
        Err(Error::VersionMismatch { found: 9, .. })
    ));
    let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
    assert!(matches!(err, Error::TruncatedPayload { .. }));
    assert!(err.to_string().contains("truncated payload"));
}

#[test]
fn idx_and_cifar_parsers() {
    let mut idx = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
    idx.extend(0u8..12);
    let t = parse_idx(&idx, Path::new("x.idx")).unwrap();
    assert_eq!(t.dims, vec![2, 2, 3]);
    assert_eq!(t.data.len(), 12);

    let mut record = vec![7u8];
    record.extend((0..3072).map(|i| (i % 256) as u8));
    let ds = parse_cifar(&record, Path::new("batch.bin")).unwrap();
    assert_eq!(ds.labels, vec![7]);
    assert_eq!(ds.image(0).len(), 3072);
    // channel-major on disk, channels fastest in memory
    assert_eq!(ds.image(0)[1], (1024 % 256) as f64 / 255.0);
    assert!(parse_cifar(&record[..3000], Path::new("batch.bin")).is_err());
}

#[test]
fn synthetic_batches_are_reproducible() {
    assert_eq!(synthetic(50, 4), synthetic(50, 4));
    assert_ne!(synthetic(50, 4).images, synthetic(50, 5).images);
}

#[test]
fn identical_configs_give_identical_reports() {
    let cfg = ExperimentConfig {
        augment: true,
        ..quick_config()
    };
    let a = run_dacp_schedule(&cfg, None).unwrap();
    let b = run_dacp_schedule(&cfg, None).unwrap();
    assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
    assert_eq!(a.pruned, b.pruned);
}

#[test]
fn schedule_writes_phase_checkpoints_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        finetune_epochs: 1,
        ..quick_config()
    };
    let out = run_dacp_schedule(&cfg, Some(dir.path())).unwrap();
    for f in [
        "phase1.ckpt",
        "phase2.ckpt",
        "pruned.ckpt",
        "report.json",
        "epochs.csv",
        "flops.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let r = &out.report;
    assert_eq!(r.epochs.len(), cfg.epochs);
    assert_eq!(r.finetune.len(), 1);
    let phases: Vec<u8> = r.epochs.iter().map(|m| m.phase).collect();
    assert_eq!(phases, vec![1, 1, 2, 2]);
    assert_eq!(r.epochs[0].lambda_ad, 0.0);
    assert_eq!(r.epochs[3].lambda_ad, cfg.penalty.lambda_ad);
    assert_eq!(
        r.epochs[3].beta_gl,
        cfg.penalty.beta_gl * cfg.beta_phase2_scale
    );

    // reported pruned accuracy is that of the physically pruned network
    let data = load_dataset(&cfg).unwrap();
    assert_eq!(
        r.pruned_accuracy_pct,
        accuracy(&out.pruned, &data.test).unwrap()
    );
    let reloaded = load_checkpoint(&dir.path().join("pruned.ckpt")).unwrap();
    assert_eq!(
        reloaded.conv_weights().len(),
        out.pruned.conv_weights().len()
    );

    let csv = std::fs::read_to_string(dir.path().join("epochs.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + cfg.epochs + 1);
}

#[test]
fn no_penalty_run_prunes_nothing() {
    let mut cfg = quick_config();
    cfg.penalty = dacp::PenaltyConfig::none();
    cfg.tau = 0.0;
    let out = run_dacp_schedule(&cfg, None).unwrap();
    assert_eq!(out.report.flops.pruned_flops_pct, 0.0);
    assert_eq!(out.pruned, out.trained);
}

#[test]
fn divergence_aborts_with_epoch() {
    let cfg = ExperimentConfig {
        lr_max: 1e300,
        lr_min: 1e299,
        ..quick_config()
    };
    match run_dacp_schedule(&cfg, None) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch < cfg.epochs),
        other => panic!(
            "expected divergence, got {:?}",
            other.map(|o| o.report.summary)
        ),
    }
}

#[test]
fn phase_penalties() {
    let cfg = ExperimentConfig::default();
    assert_eq!(phase_penalty(&cfg, 1).lambda_ad, 0.0);
    assert_eq!(phase_penalty(&cfg, 1).beta_gl, cfg.penalty.beta_gl);
    assert_eq!(phase_penalty(&cfg, 2).lambda_ad, cfg.penalty.lambda_ad);
    let ft = phase_penalty(&cfg, 3);
    assert_eq!((ft.lambda_ad, ft.beta_gl), (0.0, 0.0));
}
