use std::fmt::Write as _;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ExecConfig, MetricsRecord};
use crate::data::{AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::ffc::{combine_heads, EnsembleRule, FfcOutputs, HeadReport};
use crate::model::Model;
use crate::tensor::Tensor;

/// Samples per inference shard.
pub const EVAL_BATCH: usize = 256;

/// Per-head logits and per-feature active-unit counts over a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// One `N x K` matrix per head.
    pub logits: Vec<Tensor<f32>>,
    /// One count vector per filtering stage `F_0..F_d`.
    pub active_counts: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Report with one row per head plus one per rule.
    pub fn report(&self, rules: &[EnsembleRule]) -> HeadReport {
        HeadReport::build(&self.logits, &self.active_counts, &self.labels, rules)
    }

    /// Metrics record; vote and average-softmax accuracies are always filled in.
    pub fn metrics(&self, rules: &[EnsembleRule]) -> MetricsRecord {
        let mut all = vec![EnsembleRule::Vote, EnsembleRule::AvgSoftmax];
        all.extend(rules.iter().filter(|r| !all.contains(r)).copied().collect::<Vec<_>>());
        MetricsRecord::from_report(&self.report(&all), self.len(), rules)
    }

    /// Tab-separated dump: sample, label, active units per stage, prediction per head.
    pub fn dump(&self) -> String {
        let mut out = String::from("sample\tlabel");
        for k in 0..self.active_counts.len() {
            let _ = write!(out, "\tactive_f{k}");
        }
        for j in 0..self.logits.len() {
            let _ = write!(out, "\tpred_out{}", j + 1);
        }
        let _ = write!(out, "\tvote");
        out.push('\n');
        let preds: Vec<Vec<usize>> = (0..self.logits.len())
            .map(|j| combine_heads(&self.logits[j..j + 1], EnsembleRule::AvgLogits))
            .collect();
        let vote = combine_heads(&self.logits, EnsembleRule::Vote);
        for (i, label) in self.labels.iter().enumerate() {
            let _ = write!(out, "{i}\t{label}");
            for counts in &self.active_counts {
                let _ = write!(out, "\t{}", counts[i]);
            }
            for p in &preds {
                let _ = write!(out, "\t{}", p[i]);
            }
            let _ = writeln!(out, "\t{}", vote[i]);
        }
        out
    }
}

fn check_compatible(model: &Model<f32>, dataset: &Dataset) -> Result<()> {
    if dataset.classes != model.spec.classes {
        return Err(Error::config(format!(
            "dataset has {} classes but the model predicts {}",
            dataset.classes, model.spec.classes
        )));
    }
    if dataset.image_shape().0 != model.spec.in_channels {
        return Err(Error::config(format!(
            "dataset images have {} channels but the model expects {}",
            dataset.image_shape().0,
            model.spec.in_channels
        )));
    }
    Ok(())
}

pub(crate) fn check_dataset(model: &Model<f32>, dataset: &Dataset) -> Result<()> {
    check_compatible(model, dataset)?;
    if dataset.is_empty() {
        return Err(Error::config("dataset is empty"));
    }
    Ok(())
}

fn infer_shard(
    model: &Model<f32>,
    dataset: &Dataset,
    policy: &AugmentPolicy,
    rows: Range<usize>,
) -> Result<FfcOutputs<f32>> {
    let shape = dataset.image_shape();
    let per = shape.0 * shape.1 * shape.2;
    let mut x = Tensor::zeros([rows.len(), shape.0, shape.1, shape.2]);
    // no augmentation, so the generator is never consulted
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (slot, row) in x.data_mut().chunks_mut(per).zip(rows) {
        policy.apply(dataset.images.row(row), shape, &mut rng, slot);
    }
    model.infer(&x)
}

/// Runs the model over `dataset` without augmentation. Shards are processed on
/// `exec.threads` workers and merged in shard order.
pub fn predict(model: &Model<f32>, dataset: &Dataset, exec: &ExecConfig) -> Result<Predictions> {
    exec.validate()?;
    check_dataset(model, dataset)?;
    let policy = AugmentPolicy::normalize_only(
        model.spec.norm_mean.clone(),
        model.spec.norm_std.clone(),
    );
    policy.validate(model.spec.in_channels)?;
    let shards: Vec<Range<usize>> = (0..dataset.len())
        .step_by(EVAL_BATCH)
        .map(|s| s..(s + EVAL_BATCH).min(dataset.len()))
        .collect();
    let run = |rows: &Range<usize>| infer_shard(model, dataset, &policy, rows.clone());
    let outputs: Vec<FfcOutputs<f32>> = if exec.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(exec.threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| shards.par_iter().map(run).collect::<Result<_>>())?
    } else {
        shards.iter().map(run).collect::<Result<_>>()?
    };
    let heads = model.head.head_count();
    let k = model.spec.classes;
    let n = dataset.len();
    let logits = (0..heads)
        .map(|j| {
            let mut data = Vec::with_capacity(n * k);
            for o in &outputs {
                data.extend_from_slice(o.logits[j].data());
            }
            Tensor::new([n, k], data)
        })
        .collect::<Result<Vec<_>>>()?;
    let active_counts = (0..=model.head.depth())
        .map(|s| outputs.iter().flat_map(|o| o.active_counts[s].iter().copied()).collect())
        .collect();
    Ok(Predictions {
        logits,
        active_counts,
        labels: dataset.labels.clone(),
    })
}

/// Per-head statistics and one accuracy per requested rule on `dataset`.
pub fn evaluate(
    model: &Model<f32>,
    dataset: &Dataset,
    rules: &[EnsembleRule],
    exec: &ExecConfig,
) -> Result<MetricsRecord> {
    Ok(predict(model, dataset, exec)?.metrics(rules))
}
