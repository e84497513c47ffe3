//! The three-phase training and pruning schedule.
//!
//! 1. Train under group lasso (`β = beta_gl`, `λ = 0`) for the first
//!    `phase1_fraction` of the epochs.
//! 2. Scale `β` by `beta_phase2_scale` and add the AD penalty
//!    (`λ = lambda_ad`) for the remaining epochs.
//! 3. Prune filters by 3D norm, align residual sums by union, shrink the
//!    network and optionally fine-tune it.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::augment;
use super::checkpoint::save_checkpoint;
use super::config::{ExperimentConfig, ThresholdMode};
use super::dataset::{load_dataset, DataSplit, Dataset};
use super::report::{EpochMetrics, RunReport};
use super::schedule::cosine_lr;
use crate::analysis::ConnectivityReport;
use crate::error::{Error, Result};
use crate::nn::{argmax, Network, Sgd};
use crate::penalties::{add_penalty_gradients, penalty_breakdown, total_loss, PenaltyConfig};
use crate::pruning::{
    apply_prune, plan_with_rule, resnet_union_adjust, FlopsReport, PrunePlan, ThresholdRule,
};
use crate::tensor::FeatureMap;

const EVAL_BATCH: usize = 256;

/// Everything a schedule run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Network at the end of phase 2.
    pub trained: Network,
    /// Physically pruned (and fine-tuned, if configured) network.
    pub pruned: Network,
    pub plan: PrunePlan,
    pub report: RunReport,
}

/// Accuracy in percent.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = data.batch(chunk);
        let logits = net.logits(&x)?;
        correct += (0..logits.batch)
            .filter(|&b| argmax(logits.sample(b)) == y[b])
            .count();
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Penalty strengths in effect for a phase.
pub fn phase_penalty(cfg: &ExperimentConfig, phase: u8) -> PenaltyConfig {
    let mut p = cfg.penalty;
    match phase {
        1 => p.lambda_ad = 0.0,
        2 => p.beta_gl *= cfg.beta_phase2_scale,
        _ => {
            p.lambda_ad = 0.0;
            p.beta_gl = 0.0;
        }
    }
    p
}

struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    data: &'a DataSplit,
    order_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
    sgd: Sgd,
}

impl Trainer<'_> {
    fn epoch(
        &mut self,
        net: &mut Network,
        epoch: usize,
        phase: u8,
        lr: f64,
    ) -> Result<EpochMetrics> {
        let pen = phase_penalty(self.cfg, phase);
        let train = &self.data.train;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.order_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(self.cfg.batch) {
            let (mut x, y) = train.batch(chunk);
            if self.cfg.augment {
                x = augment_batch(&x, &mut self.augment_rng);
            }
            let (loss, mut grads) = net.loss_and_gradients(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            add_penalty_gradients(net, &pen, &mut grads);
            self.sgd.step(net, &grads, lr)?;
        }
        let task_loss = loss_sum / train.len().max(1) as f64;
        let b = penalty_breakdown(net, &pen);
        let total = total_loss(task_loss, &b, &pen);
        if !total.is_finite() {
            return Err(Error::Diverged { epoch, loss: total });
        }
        Ok(EpochMetrics {
            epoch,
            phase,
            lr,
            lambda_ad: pen.lambda_ad,
            beta_gl: pen.beta_gl,
            task_loss,
            r_g: b.r_g,
            r_c: b.r_c,
            total_loss: total,
            train_accuracy_pct: accuracy(net, train)?,
            test_accuracy_pct: accuracy(net, &self.data.test)?,
        })
    }
}

fn augment_batch(x: &FeatureMap, rng: &mut ChaCha8Rng) -> FeatureMap {
    let mut values = Vec::with_capacity(x.values.len());
    for b in 0..x.batch {
        values.extend(augment(&x.single(b), rng).values);
    }
    FeatureMap {
        values,
        ..x.clone()
    }
}

/// Loads the configured dataset and runs the schedule.
pub fn run_dacp_schedule(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let data = load_dataset(cfg)?;
    run_with_data(cfg, &data, out_dir)
}

/// Runs the schedule on `data`. When `out_dir` is given, checkpoints are
/// written at each phase boundary (`phase1.ckpt`, `phase2.ckpt`,
/// `pruned.ckpt`).
pub fn run_with_data(
    cfg: &ExperimentConfig,
    data: &DataSplit,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let checkpoint = |net: &Network, name: &str| -> Result<()> {
        match out_dir {
            Some(dir) => save_checkpoint(net, &dir.join(name)),
            None => Ok(()),
        }
    };

    let mut net = cfg
        .arch
        .build(data.train.dims, data.train.classes, cfg.seed)?;
    let mut trainer = Trainer {
        cfg,
        data,
        order_rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)),
        augment_rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2)),
        sgd: Sgd::new(cfg.momentum),
    };

    let phase1 = cfg.phase1_epochs();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let phase = if epoch < phase1 { 1 } else { 2 };
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max, cfg.lr_min);
        epochs.push(trainer.epoch(&mut net, epoch, phase, lr)?);
        if epoch + 1 == phase1 {
            checkpoint(&net, "phase1.ckpt")?;
        }
    }
    checkpoint(&net, "phase2.ckpt")?;
    let trained = net;

    let rule = match cfg.threshold_mode {
        ThresholdMode::MeanRelative => ThresholdRule::MeanRelative { tau: cfg.tau },
        ThresholdMode::Absolute => ThresholdRule::Absolute { threshold: cfg.tau },
    };
    let plan = resnet_union_adjust(&plan_with_rule(&trained, rule)?, &trained);
    let mut pruned = apply_prune(&trained, &plan)?;
    let accuracy_before_prune_pct = accuracy(&trained, &data.test)?;

    trainer.sgd.reset();
    let mut finetune = Vec::with_capacity(cfg.finetune_epochs);
    for e in 0..cfg.finetune_epochs {
        finetune.push(trainer.epoch(&mut pruned, cfg.epochs + e, 3, cfg.lr_min)?);
    }
    checkpoint(&pruned, "pruned.ckpt")?;

    let hw = (data.train.dims.h, data.train.dims.w);
    let flops = FlopsReport::compare(&trained, &pruned, hw)?;
    let pruned_accuracy_pct = accuracy(&pruned, &data.test)?;
    let report = RunReport {
        config: cfg.clone(),
        epochs,
        finetune,
        penalties: penalty_breakdown(&trained, &cfg.penalty),
        accuracy_before_prune_pct,
        pruned_accuracy_pct,
        summary: flops.summary(pruned_accuracy_pct),
        flops,
        plan: plan.clone(),
        connectivity_trained: ConnectivityReport::of(&trained),
        connectivity_pruned: ConnectivityReport::of(&pruned),
    };
    if let Some(dir) = out_dir {
        report.save_json(&dir.join("report.json"))?;
        report.save_epoch_csv(&dir.join("epochs.csv"))?;
        report.flops.save_csv(&dir.join("flops.csv"))?;
    }
    Ok(RunOutcome {
        trained,
        pruned,
        plan,
        report,
    })
}
