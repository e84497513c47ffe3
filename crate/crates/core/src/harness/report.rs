use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::analysis::ConnectivityReport;
use crate::error::{Error, Result};
use crate::penalties::PenaltyBreakdown;
use crate::pruning::{FlopsReport, PrunePlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// 1 = group lasso only, 2 = reduced group lasso plus AD, 3 = fine-tune.
    pub phase: u8,
    pub lr: f64,
    pub lambda_ad: f64,
    pub beta_gl: f64,
    /// Mean cross-entropy over the epoch's batches.
    pub task_loss: f64,
    /// Penalty terms at the end of the epoch.
    pub r_g: f64,
    pub r_c: f64,
    pub total_loss: f64,
    pub train_accuracy_pct: f64,
    pub test_accuracy_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub epochs: Vec<EpochMetrics>,
    pub finetune: Vec<EpochMetrics>,
    pub penalties: PenaltyBreakdown,
    pub accuracy_before_prune_pct: f64,
    /// Accuracy of the physically pruned network.
    pub pruned_accuracy_pct: f64,
    pub flops: FlopsReport,
    pub plan: PrunePlan,
    pub connectivity_trained: ConnectivityReport,
    pub connectivity_pruned: ConnectivityReport,
    pub summary: String,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn write_epoch_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for m in self.epochs.iter().chain(&self.finetune) {
            w.serialize(m)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_epoch_csv(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_epoch_csv(std::io::BufWriter::new(f))
    }
}
