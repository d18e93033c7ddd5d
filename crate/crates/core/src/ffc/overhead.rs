use std::fmt;

use serde::{Deserialize, Serialize};

/// Cost of an FFC head over a plain linear classifier of the same width.
///
/// FLOPs count one multiply-accumulate as one operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub channels: usize,
    pub classes: usize,
    pub depth: usize,
    /// LayerNorm gain and bias: `2 * d * C`.
    pub extra_params: usize,
    /// The `2d` additional applications of the shared `C x K` classifier.
    pub classifier_flops: usize,
    /// Per stage: mean, centring, variance, scaling, affine, ReLU (`6C`).
    pub filter_flops: usize,
    /// Adjacent-feature means feeding the averaged heads (`C` each).
    pub averaging_flops: usize,
    pub extra_flops: usize,
}

/// Operations per unit in one filtering stage.
const FILTER_OPS_PER_UNIT: usize = 6;

pub fn overhead_report(channels: usize, classes: usize, depth: usize) -> OverheadReport {
    let classifier_flops = 2 * depth * channels * classes;
    let filter_flops = depth * FILTER_OPS_PER_UNIT * channels;
    let averaging_flops = depth * channels;
    OverheadReport {
        channels,
        classes,
        depth,
        extra_params: 2 * depth * channels,
        classifier_flops,
        filter_flops,
        averaging_flops,
        extra_flops: classifier_flops + filter_flops + averaging_flops,
    }
}

impl fmt::Display for OverheadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "channels={} classes={} depth={} heads={}",
            self.channels,
            self.classes,
            self.depth,
            2 * self.depth + 1
        )?;
        writeln!(
            f,
            "extra_params={} ({:.3}M)",
            self.extra_params,
            self.extra_params as f64 / 1e6
        )?;
        writeln!(
            f,
            "extra_flops={} ({:.4} GFLOPs; 1 FLOP = 1 multiply-accumulate)",
            self.extra_flops,
            self.extra_flops as f64 / 1e9
        )?;
        writeln!(f, "  classifier={}", self.classifier_flops)?;
        writeln!(f, "  filtering={}", self.filter_flops)?;
        write!(f, "  averaging={}", self.averaging_flops)
    }
}
