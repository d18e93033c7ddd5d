//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ffc_core::{FfcOutputs, Tensor};
use rand::Rng;

/// Literal re-vote of one sample: count every head's argmax (lowest index on
/// ties), and if several classes share the top count, return the class of the
/// most confident head among those voting for a tied class (earliest head on
/// equal confidence).
pub fn revote(rows: &[Vec<f64>]) -> usize {
    let mut ballots = Vec::new();
    for row in rows {
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        let shift = row[best];
        let exps: Vec<f64> = row.iter().map(|&v| (v - shift).exp()).collect();
        let total: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();
        ballots.push((best, probs[best]));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &(class, _) in &ballots {
        *counts.entry(class).or_default() += 1;
    }
    let top = *counts.values().max().unwrap();
    let tied: Vec<usize> = counts
        .iter()
        .filter(|(_, &c)| c == top)
        .map(|(&k, _)| k)
        .collect();
    if tied.len() == 1 {
        return tied[0];
    }
    let mut winner: Option<(usize, f64)> = None;
    for &(class, conf) in &ballots {
        if !tied.contains(&class) {
            continue;
        }
        match winner {
            Some((_, best)) if conf <= best => {}
            _ => winner = Some((class, conf)),
        }
    }
    winner.unwrap().0
}

/// Re-votes every sample of per-head `N x K` logit matrices.
pub fn revote_all(logits: &[Tensor<f32>]) -> Vec<usize> {
    let n = logits[0].dim(0);
    (0..n)
        .map(|i| {
            let rows: Vec<Vec<f64>> = logits
                .iter()
                .map(|l| l.row(i).iter().map(|&v| v as f64).collect())
                .collect();
            revote(&rows)
        })
        .collect()
}

/// Random head outputs with `2d + 1` heads. Half the draws come from a coarse
/// grid so that argmax ties, vote ties and equal confidences all occur.
pub fn random_outputs<R: Rng>(rng: &mut R, n: usize, k: usize, d: usize) -> FfcOutputs<f32> {
    let coarse = rng.random_bool(0.5);
    let logits = (0..2 * d + 1)
        .map(|_| {
            Tensor::from_fn([n, k], |_| {
                if coarse {
                    rng.random_range(-2i32..=2) as f32 * 0.5
                } else {
                    rng.random_range(-4.0f32..4.0)
                }
            })
        })
        .collect();
    FfcOutputs {
        logits,
        features: Vec::new(),
        active_counts: Vec::new(),
    }
}
