use std::fmt;

use serde::{Deserialize, Serialize};

use super::ensemble::combine_heads;
use super::{EnsembleRule, FfcOutputs, HeadInput};
use crate::nn::softmax;
use crate::tensor::ops::argmax;
use crate::tensor::{Scalar, Tensor};

/// Per-head evaluation statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadStats {
    /// 1-based output number (Out1, Out2, ...).
    pub head_id: usize,
    pub top1: f64,
    /// Mean nonzero units of the classified feature; `None` for heads that
    /// see an averaged feature, which has no zeroing step of its own.
    pub mean_active_units: Option<f64>,
    /// Mean softmax probability assigned to the true class.
    pub mean_confidence: f64,
}

impl HeadStats {
    /// Filtering stages applied before this head, for filtered heads.
    pub fn sequence(&self) -> Option<usize> {
        match HeadInput::of(self.head_id - 1) {
            HeadInput::Filtered(k) => Some(k),
            HeadInput::Averaged(..) => None,
        }
    }
}

/// Statistics of every head from raw per-head logits and per-feature active
/// unit counts.
pub fn head_stats_from<T: Scalar>(
    logits: &[Tensor<T>],
    active_counts: &[Vec<usize>],
    labels: &[usize],
) -> Vec<HeadStats> {
    let n = labels.len().max(1) as f64;
    logits
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let probs = softmax(l);
            let mut correct = 0usize;
            let mut confidence = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                if argmax(l.row(i)) == label {
                    correct += 1;
                }
                confidence += probs.row(i)[label].to_f64_lossy();
            }
            let mean_active_units = match HeadInput::of(j) {
                HeadInput::Filtered(k) => active_counts
                    .get(k)
                    .map(|c| c.iter().sum::<usize>() as f64 / n),
                HeadInput::Averaged(..) => None,
            };
            HeadStats {
                head_id: j + 1,
                top1: correct as f64 / n,
                mean_active_units,
                mean_confidence: confidence / n,
            }
        })
        .collect()
}

pub fn head_statistics<T: Scalar>(outputs: &FfcOutputs<T>, labels: &[usize]) -> Vec<HeadStats> {
    head_stats_from(&outputs.logits, &outputs.active_counts, labels)
}

/// Top-1 accuracy of `predictions` against `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len().max(1) as f64
}

/// Accuracy of one combination rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAccuracy {
    pub rule: EnsembleRule,
    pub top1: f64,
}

/// Per-head rows followed by ensemble rows, laid out like the usual
/// "Out1..Out7, AVG, VOTE" comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub heads: Vec<HeadStats>,
    pub ensembles: Vec<RuleAccuracy>,
}

impl HeadReport {
    pub fn build<T: Scalar>(
        logits: &[Tensor<T>],
        active_counts: &[Vec<usize>],
        labels: &[usize],
        rules: &[EnsembleRule],
    ) -> Self {
        Self {
            heads: head_stats_from(logits, active_counts, labels),
            ensembles: rules
                .iter()
                .map(|&rule| RuleAccuracy {
                    rule,
                    top1: accuracy(&combine_heads(logits, rule), labels),
                })
                .collect(),
        }
    }

    pub fn rule_top1(&self, rule: EnsembleRule) -> Option<f64> {
        self.ensembles.iter().find(|r| r.rule == rule).map(|r| r.top1)
    }
}

impl fmt::Display for HeadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>14} {:>9} {:>16} {:>9}",
            "output", "active units", "sequence", "mean confidence", "top-1"
        )?;
        let dash = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for h in &self.heads {
            writeln!(
                f,
                "{:<12} {:>14} {:>9} {:>15.2}% {:>8.2}%",
                format!("Out{}", h.head_id),
                dash(h.mean_active_units.map(|v| format!("{v:.1}"))),
                dash(h.sequence().map(|s| s.to_string())),
                100.0 * h.mean_confidence,
                100.0 * h.top1
            )?;
        }
        for r in &self.ensembles {
            writeln!(
                f,
                "{:<12} {:>14} {:>9} {:>16} {:>8.2}%",
                r.rule.label(),
                "-",
                "-",
                "-",
                100.0 * r.top1
            )?;
        }
        Ok(())
    }
}
