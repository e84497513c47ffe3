use std::f64::consts::PI;

/// Cosine decay from `lr_max` at epoch 0 to `lr_min` at epoch `total`.
pub fn cosine_lr(epoch: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    let t = epoch.min(total) as f64 / total.max(1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t).cos())
}
