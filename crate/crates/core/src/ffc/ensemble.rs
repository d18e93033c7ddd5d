use serde::{Deserialize, Serialize};

use super::FfcOutputs;
use crate::error::Error;
use crate::nn::softmax;
use crate::tensor::ops::argmax;
use crate::tensor::{Scalar, Tensor};

/// How the per-head logits are combined into one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleRule {
    /// Plurality of per-head argmaxes; ties go to the most confident head
    /// among those voting for a tied class.
    Vote,
    AvgSoftmax,
    AvgLogits,
}

impl EnsembleRule {
    pub const ALL: [EnsembleRule; 3] = [
        EnsembleRule::Vote,
        EnsembleRule::AvgSoftmax,
        EnsembleRule::AvgLogits,
    ];

    /// Short row label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            EnsembleRule::Vote => "VOTE",
            EnsembleRule::AvgSoftmax => "AVG",
            EnsembleRule::AvgLogits => "AVG-LOGITS",
        }
    }
}

impl std::str::FromStr for EnsembleRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "vote" => Ok(EnsembleRule::Vote),
            "avg-softmax" | "avg" => Ok(EnsembleRule::AvgSoftmax),
            "avg-logits" => Ok(EnsembleRule::AvgLogits),
            other => Err(Error::Config(format!(
                "unknown ensemble rule `{other}` (vote, avg-softmax, avg-logits)"
            ))),
        }
    }
}

impl std::fmt::Display for EnsembleRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnsembleRule::Vote => "vote",
            EnsembleRule::AvgSoftmax => "avg-softmax",
            EnsembleRule::AvgLogits => "avg-logits",
        })
    }
}

/// A head's vote for one sample: its argmax and its largest softmax probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ballot {
    pub class: usize,
    pub confidence: f64,
}

impl Ballot {
    pub fn from_logits<T: Scalar>(logits: &[T]) -> Self {
        let class = argmax(logits);
        let max = logits[class].to_f64_lossy();
        let total: f64 = logits.iter().map(|v| (v.to_f64_lossy() - max).exp()).sum();
        Self {
            class,
            confidence: 1.0 / total,
        }
    }
}

/// Plurality vote with the confidence tie-break.
///
/// With a unique top vote count that class wins. Otherwise only heads whose
/// ballot is one of the tied classes compete, and the one with the highest
/// confidence decides (the earliest head on an exact confidence tie).
pub fn vote(ballots: &[Ballot], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for b in ballots {
        counts[b.class] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    let mut tied = counts.iter().enumerate().filter(|(_, &c)| c == top).map(|(k, _)| k);
    let first = tied.next().unwrap_or(0);
    if tied.next().is_none() {
        return first;
    }
    let mut best: Option<&Ballot> = None;
    for b in ballots.iter().filter(|b| counts[b.class] == top) {
        if best.is_none_or(|cur| b.confidence > cur.confidence) {
            best = Some(b);
        }
    }
    best.map_or(first, |b| b.class)
}

/// Combines `logits` (one `N x K` matrix per head) into one class per sample.
pub fn combine_heads<T: Scalar>(logits: &[Tensor<T>], rule: EnsembleRule) -> Vec<usize> {
    let Some(first) = logits.first() else {
        return Vec::new();
    };
    let (n, k) = (first.dim(0), first.dim(1));
    match rule {
        EnsembleRule::Vote => (0..n)
            .map(|i| {
                let ballots: Vec<Ballot> =
                    logits.iter().map(|l| Ballot::from_logits(l.row(i))).collect();
                vote(&ballots, k)
            })
            .collect(),
        EnsembleRule::AvgSoftmax => {
            let probs: Vec<Tensor<T>> = logits.iter().map(softmax).collect();
            averaged_argmax(&probs, n, k)
        }
        EnsembleRule::AvgLogits => averaged_argmax(logits, n, k),
    }
}

fn averaged_argmax<T: Scalar>(per_head: &[Tensor<T>], n: usize, k: usize) -> Vec<usize> {
    (0..n)
        .map(|i| {
            let mut mean = vec![0.0f64; k];
            for t in per_head {
                for (m, v) in mean.iter_mut().zip(t.row(i)) {
                    *m += v.to_f64_lossy();
                }
            }
            argmax(&mean)
        })
        .collect()
}

/// Mean of the per-head softmax distributions, `N x K`.
pub fn mean_softmax<T: Scalar>(logits: &[Tensor<T>]) -> Tensor<f64> {
    let (n, k) = (logits[0].dim(0), logits[0].dim(1));
    let mut mean = Tensor::<f64>::zeros([n, k]);
    let scale = 1.0 / logits.len() as f64;
    for l in logits {
        for (m, p) in mean.data_mut().iter_mut().zip(softmax(l).data()) {
            *m += p.to_f64_lossy() * scale;
        }
    }
    mean
}

pub fn ensemble_predict<T: Scalar>(outputs: &FfcOutputs<T>, rule: EnsembleRule) -> Vec<usize> {
    combine_heads(&outputs.logits, rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ballots(classes: &[usize], conf: &[f64]) -> Vec<Ballot> {
        classes
            .iter()
            .zip(conf)
            .map(|(&class, &confidence)| Ballot { class, confidence })
            .collect()
    }

    #[test]
    fn strict_majority_wins() {
        let b = ballots(&[2, 2, 2, 5, 5, 1, 2], &[0.1, 0.2, 0.3, 0.99, 0.98, 0.97, 0.4]);
        assert_eq!(vote(&b, 10), 2);
    }

    #[test]
    fn three_way_tie_goes_to_most_confident_tied_head() {
        let b = ballots(&[1, 1, 3, 3, 7, 7, 9], &[0.6, 0.5, 0.9, 0.2, 0.4, 0.3, 0.1]);
        assert_eq!(vote(&b, 10), 3);
    }

    #[test]
    fn untied_head_cannot_break_a_tie() {
        // class 9 has one vote but the highest confidence
        let b = ballots(&[1, 1, 3, 3, 9], &[0.5, 0.5, 0.6, 0.4, 0.99]);
        assert_eq!(vote(&b, 10), 3);
    }

    #[test]
    fn all_disagree_picks_most_confident() {
        let b = ballots(&[0, 1, 2, 3, 4, 5, 6], &[0.3, 0.2, 0.5, 0.8, 0.1, 0.4, 0.6]);
        assert_eq!(vote(&b, 7), 3);
    }

    #[test]
    fn ballot_confidence_is_max_softmax() {
        let b = Ballot::from_logits(&[0.0f64, (3.0f64).ln()]);
        assert_eq!(b.class, 1);
        assert!((b.confidence - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rules_parse_and_print() {
        for rule in EnsembleRule::ALL {
            assert_eq!(rule.to_string().parse::<EnsembleRule>().unwrap(), rule);
        }
        assert!("mean".parse::<EnsembleRule>().is_err());
    }

    #[test]
    fn averaging_rules() {
        // head A is very confident in class 0, heads B and C mildly prefer class 1
        let a = Tensor::<f64>::from_f64([1, 2], &[10.0, 0.0]).unwrap();
        let b = Tensor::<f64>::from_f64([1, 2], &[0.0, 0.5]).unwrap();
        let heads = vec![a, b.clone(), b];
        assert_eq!(combine_heads(&heads, EnsembleRule::Vote), vec![1]);
        assert_eq!(combine_heads(&heads, EnsembleRule::AvgLogits), vec![0]);
        // softmax mean: (1 + 2*0.3775)/3 vs (0 + 2*0.6225)/3
        assert_eq!(combine_heads(&heads, EnsembleRule::AvgSoftmax), vec![0]);
    }

    #[test]
    fn shifting_one_head_does_not_change_vote() {
        let a = Tensor::<f64>::from_f64([2, 3], &[1.0, 2.0, 0.0, 0.3, 0.1, 0.2]).unwrap();
        let b = Tensor::<f64>::from_f64([2, 3], &[0.0, 0.0, 5.0, 1.0, 1.5, 0.2]).unwrap();
        let c = Tensor::<f64>::from_f64([2, 3], &[3.0, 1.0, 0.0, 0.0, 0.2, 0.1]).unwrap();
        let before = combine_heads(&[a.clone(), b.clone(), c.clone()], EnsembleRule::Vote);
        let shifted = b.map(|v| v + 100.0);
        let after = combine_heads(&[a, shifted, c], EnsembleRule::Vote);
        assert_eq!(before, after);
    }
}
