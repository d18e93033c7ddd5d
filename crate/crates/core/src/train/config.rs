use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LrSchedule;

/// Optimizer, schedule and regularization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub label_smoothing: f64,
    /// Beta parameter of mixup; 0 disables it.
    pub mixup_alpha: f64,
    pub seed: u64,
    pub pad_crop: usize,
    pub hflip: bool,
    /// Update only the head parameters.
    pub freeze_backbone: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs: 5,
            batch_size: 64,
            schedule: LrSchedule::Cosine,
            label_smoothing: 0.0,
            mixup_alpha: 0.0,
            seed: 0,
            pad_crop: 0,
            hflip: false,
            freeze_backbone: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, value: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("invalid {key} = {value}")))
            }
        };
        check(
            self.base_lr > 0.0 && self.base_lr.is_finite(),
            "base_lr",
            self.base_lr.to_string(),
        )?;
        check(
            (0.0..1.0).contains(&self.momentum),
            "momentum",
            self.momentum.to_string(),
        )?;
        check(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay",
            self.weight_decay.to_string(),
        )?;
        check(self.epochs > 0, "epochs", self.epochs.to_string())?;
        check(self.batch_size > 0, "batch_size", self.batch_size.to_string())?;
        check(
            (0.0..1.0).contains(&self.label_smoothing),
            "label_smoothing",
            self.label_smoothing.to_string(),
        )?;
        check(
            self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite(),
            "mixup_alpha",
            self.mixup_alpha.to_string(),
        )
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("train.base_lr".into(), self.base_lr.to_string()),
            ("train.momentum".into(), self.momentum.to_string()),
            ("train.weight_decay".into(), self.weight_decay.to_string()),
            ("train.epochs".into(), self.epochs.to_string()),
            ("train.batch_size".into(), self.batch_size.to_string()),
            ("train.schedule".into(), self.schedule.to_string()),
            ("train.label_smoothing".into(), self.label_smoothing.to_string()),
            ("train.mixup_alpha".into(), self.mixup_alpha.to_string()),
            ("train.seed".into(), self.seed.to_string()),
            ("train.pad_crop".into(), self.pad_crop.to_string()),
            ("train.hflip".into(), self.hflip.to_string()),
            ("train.freeze_backbone".into(), self.freeze_backbone.to_string()),
        ])
    }
}

/// How work is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecConfig {
    /// Worker threads for evaluation shards.
    pub threads: usize,
    /// Omits wall-clock times from metrics so that repeated runs produce
    /// byte-identical logs.
    pub deterministic: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            threads: 1,
            deterministic: true,
        }
    }
}

impl ExecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        Ok(())
    }
}
