use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ffc::{EnsembleRule, HeadReport, HeadStats, RuleAccuracy};

/// One evaluation of a model on a held-out split, as written to the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// 1-based epoch; absent for standalone evaluations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    pub samples: usize,
    pub per_head: Vec<HeadStats>,
    pub vote_top1: f64,
    pub avg_softmax_top1: f64,
    /// Accuracy of every requested rule, in request order.
    pub rules: Vec<RuleAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
}

impl MetricsRecord {
    /// `report` must include the vote and average-softmax rules.
    pub fn from_report(report: &HeadReport, samples: usize, requested: &[EnsembleRule]) -> Self {
        let top1 = |rule| report.rule_top1(rule).unwrap_or(f64::NAN);
        Self {
            epoch: None,
            train_loss: None,
            lr: None,
            samples,
            per_head: report.heads.clone(),
            vote_top1: top1(EnsembleRule::Vote),
            avg_softmax_top1: top1(EnsembleRule::AvgSoftmax),
            rules: requested
                .iter()
                .map(|&rule| RuleAccuracy {
                    rule,
                    top1: top1(rule),
                })
                .collect(),
            wall_seconds: None,
        }
    }

    /// The report restricted to the requested rules.
    pub fn report(&self) -> HeadReport {
        HeadReport {
            heads: self.per_head.clone(),
            ensembles: self.rules.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    pub fn from_json(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| crate::Error::format(e.to_string()))
    }
}

/// Writes one JSON record per line.
pub fn write_record<W: Write>(out: &mut W, record: &MetricsRecord) -> Result<()> {
    writeln!(out, "{}", record.to_json())?;
    out.flush()?;
    Ok(())
}
