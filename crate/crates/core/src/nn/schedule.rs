use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-epoch learning-rate policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply by 0.1 at half and at three quarters of the run.
    Step,
    Cosine,
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize, total: usize, base_lr: f64) -> Result<f64> {
        if total == 0 {
            return Err(Error::config("schedule needs at least one epoch"));
        }
        match self {
            LrSchedule::Constant => Ok(base_lr),
            LrSchedule::Step => {
                let drops = [total / 2, total * 3 / 4]
                    .iter()
                    .filter(|&&at| at > 0 && epoch >= at)
                    .count();
                Ok(base_lr * 0.1f64.powi(drops as i32))
            }
            LrSchedule::Cosine => cosine_lr(epoch, total, base_lr),
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "step" => Ok(LrSchedule::Step),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::config(format!("unknown schedule `{other}`"))),
        }
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Step => "step",
            LrSchedule::Cosine => "cosine",
        })
    }
}

/// `base_lr * (1 + cos(pi * t / T)) / 2`
pub fn cosine_lr(epoch: usize, total: usize, base_lr: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::config("cosine schedule with zero total epochs"));
    }
    if epoch > total {
        return Err(Error::config(format!("epoch {epoch} past total {total}")));
    }
    let t = epoch as f64 / total as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 10, 0.4).unwrap(), 0.4);
        assert!(cosine_lr(10, 10, 0.4).unwrap().abs() < 1e-16);
        assert!((cosine_lr(5, 10, 0.4).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_total() {
        assert!(matches!(cosine_lr(0, 0, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn step_schedule_drops_twice() {
        let s = LrSchedule::Step;
        let lrs: Vec<f64> = (0..8).map(|e| s.lr(e, 8, 1.0).unwrap()).collect();
        assert_eq!(lrs[3], 1.0);
        assert!((lrs[4] - 0.1).abs() < 1e-15);
        assert!((lrs[6] - 0.01).abs() < 1e-15);
    }
}
