//! Sequential feature filtering classifier head.
//!
//! Repeated LayerNorm + ReLU shrinks the set of active units of a pooled
//! feature vector. Every intermediate feature, and the mean of every adjacent
//! pair, goes through one shared linear classifier. Training averages the
//! per-head losses; inference combines the heads by voting.

mod ensemble;
mod head;
mod overhead;
mod stats;

pub use ensemble::{combine_heads, ensemble_predict, mean_softmax, vote, Ballot, EnsembleRule};
pub use head::{
    active_units, filter_step, FfcHead, FfcOutputs, FilterStage, HeadInput, DEFAULT_LN_EPS,
};
pub use overhead::{overhead_report, OverheadReport};
pub use stats::{accuracy, head_statistics, head_stats_from, HeadReport, HeadStats, RuleAccuracy};

use crate::error::Result;
use crate::nn::{softmax_cross_entropy, Targets};
use crate::tensor::{Scalar, Tensor};

/// Mean of the per-head cross-entropies, and each head's logit gradient
/// (already scaled by `1 / heads`).
pub fn train_loss<T: Scalar>(
    outputs: &FfcOutputs<T>,
    targets: Targets<'_, T>,
    smoothing: f64,
) -> Result<(T, Vec<Tensor<T>>)> {
    let heads = outputs.logits.len();
    let scale = T::one() / T::from_usize_lossy(heads);
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(heads);
    for logits in &outputs.logits {
        let (loss, mut grad) = softmax_cross_entropy(logits, targets, smoothing)?;
        total = total + loss;
        grad.scale(scale);
        grads.push(grad);
    }
    Ok((total * scale, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outputs(logits: Vec<Tensor<f64>>) -> FfcOutputs<f64> {
        FfcOutputs {
            logits,
            features: Vec::new(),
            active_counts: Vec::new(),
        }
    }

    #[test]
    fn identical_heads_cost_one_head() {
        let l = Tensor::from_f64([2, 3], &[0.2, 1.0, -0.5, 2.0, 0.0, 0.1]).unwrap();
        let (single, _) = softmax_cross_entropy(&l, Targets::Hard(&[1, 0]), 0.1).unwrap();
        let (avg, grads) =
            train_loss(&outputs(vec![l.clone(); 7]), Targets::Hard(&[1, 0]), 0.1).unwrap();
        assert!((single - avg).abs() < 1e-14);
        assert_eq!(grads.len(), 7);
    }

    #[test]
    fn single_head_is_plain_cross_entropy() {
        let l = Tensor::from_f64([1, 2], &[0.3, -0.3]).unwrap();
        let (plain, g_plain) = softmax_cross_entropy(&l, Targets::Hard(&[0]), 0.0).unwrap();
        let (avg, g) = train_loss(&outputs(vec![l]), Targets::Hard(&[0]), 0.0).unwrap();
        assert_eq!(plain, avg);
        assert_eq!(g_plain, g[0]);
    }

    #[test]
    fn loss_is_mean_of_head_losses() {
        // choose two-class logits with CE = 0.3, 0.6, 0.9 for label 0:
        // CE = ln(1 + e^{-m}) for margin m, so m = -ln(e^{CE} - 1)
        let heads: Vec<Tensor<f64>> = [0.3f64, 0.6, 0.9]
            .iter()
            .map(|ce| {
                let margin = -(ce.exp() - 1.0).ln();
                Tensor::from_f64([1, 2], &[margin, 0.0]).unwrap()
            })
            .collect();
        let (loss, _) = train_loss(&outputs(heads), Targets::Hard(&[0]), 0.0).unwrap();
        assert!((loss - 0.6).abs() < 1e-12);
    }
}
