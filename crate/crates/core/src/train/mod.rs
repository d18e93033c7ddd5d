//! Training loop, evaluation, model ensembling, gradient checks and
//! checkpoint persistence.

mod checkpoint;
mod config;
mod ensemble;
mod eval;
pub mod gradcheck;
mod metrics;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ExecConfig, TrainConfig};
pub use ensemble::{average_distributions, ensemble_models, EnsembleResult};
pub use eval::{evaluate, predict, Predictions, EVAL_BATCH};
pub use gradcheck::{grad_check, Component, GradCheckConfig, GradCheckReport};
pub use metrics::{write_record, MetricsRecord};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{batch_iter, AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::ffc::{train_loss, EnsembleRule};
use crate::model::Model;
use crate::nn::{mixup_batch, Sgd, Targets};

/// Stream of the mixup generator; batch streams use `2 * epoch` and `2 * epoch + 1`.
const MIXUP_STREAM: u64 = u64::MAX;

fn check_inputs(model: &Model<f32>, train_set: &Dataset, eval_set: &Dataset) -> Result<()> {
    for (what, ds) in [("training", train_set), ("evaluation", eval_set)] {
        eval::check_dataset(model, ds)
            .map_err(|e| Error::config(format!("{what} set: {e}")))?;
    }
    Ok(())
}

/// Trains `model` in place with momentum SGD, evaluating on `eval_set` after
/// every epoch. `on_epoch` sees each record as soon as it is ready, which is
/// where callers persist metrics and checkpoints.
///
/// A non-finite loss aborts with [`Error::Diverged`] after restoring the
/// parameters from the end of the last completed epoch.
pub fn train(
    model: &mut Model<f32>,
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &TrainConfig,
    exec: &ExecConfig,
    rules: &[EnsembleRule],
    mut on_epoch: impl FnMut(&Model<f32>, &MetricsRecord) -> Result<()>,
) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    exec.validate()?;
    check_inputs(model, train_set, eval_set)?;
    let policy = AugmentPolicy {
        pad_crop: cfg.pad_crop,
        hflip: cfg.hflip,
        mean: model.spec.norm_mean.clone(),
        std: model.spec.norm_std.clone(),
    };
    let classes = model.spec.classes;
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut mix_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    mix_rng.set_stream(MIXUP_STREAM);
    let mut last_good = model.values();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.schedule.lr(epoch, cfg.epochs, cfg.base_lr)?;
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for (b, batch) in batch_iter(train_set, cfg.batch_size, true, cfg.seed, epoch, &policy)?
            .enumerate()
        {
            model.zero_grad();
            let step = if cfg.mixup_alpha > 0.0 && batch.labels.len() > 1 {
                let mixed = mixup_batch(&batch.x, &batch.labels, classes, cfg.mixup_alpha, &mut mix_rng)?;
                let outputs = model.forward(&mixed.inputs)?;
                train_loss(&outputs, Targets::Soft(&mixed.targets), cfg.label_smoothing)
            } else {
                let outputs = model.forward(&batch.x)?;
                train_loss(&outputs, Targets::Hard(&batch.labels), cfg.label_smoothing)
            };
            let (loss, grads) = match step {
                Ok((loss, grads)) if loss.is_finite() => (loss, grads),
                Ok((loss, _)) => return Err(diverged(model, &last_good, epoch, b, loss as f64)),
                Err(Error::Numeric(_)) => {
                    return Err(diverged(model, &last_good, epoch, b, f64::NAN))
                }
                Err(e) => return Err(e),
            };
            if cfg.freeze_backbone {
                model.head.backward(&grads)?;
                sgd.step(model.head.params_mut(), lr);
            } else {
                model.backward(&grads)?;
                sgd.step(model.params_mut(), lr);
            }
            loss_sum += loss as f64;
            batches += 1;
        }
        if !model.values().iter().all(|t| t.is_finite()) {
            return Err(diverged(model, &last_good, epoch, batches, f64::NAN));
        }
        let mut record = evaluate(model, eval_set, rules, exec)?;
        record.epoch = Some(epoch + 1);
        record.train_loss = Some(loss_sum / batches.max(1) as f64);
        record.lr = Some(lr);
        if !exec.deterministic {
            record.wall_seconds = Some(started.elapsed().as_secs_f64());
        }
        on_epoch(model, &record)?;
        last_good = model.values();
        records.push(record);
    }
    Ok(records)
}

fn diverged(
    model: &mut Model<f32>,
    last_good: &[crate::tensor::Tensor<f32>],
    epoch: usize,
    batch: usize,
    loss: f64,
) -> Error {
    if let Err(e) = model.load_values(last_good) {
        return e;
    }
    Error::Diverged {
        epoch: epoch + 1,
        batch,
        loss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use crate::nn::{Layer, LrSchedule, Param};
    use crate::tensor::Tensor;

    /// Two well separated classes: bright top half vs bright bottom half.
    fn stripes(n: usize, seed: u64) -> Dataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut images = Tensor::zeros([n, 1, 8, 8]);
        for (i, &label) in labels.iter().enumerate() {
            for (p, v) in images.row_mut(i).iter_mut().enumerate() {
                let top = p < 32;
                let bright = (label == 0) == top;
                *v = if bright { 0.8 } else { 0.1 } + rng.random_range(0.0..0.1);
            }
        }
        Dataset::new(images, labels, 2).unwrap()
    }

    fn spec(depth: usize) -> ModelSpec {
        ModelSpec {
            widths: vec![4, 8],
            norm_mean: vec![0.45],
            norm_std: vec![0.35],
            ..ModelSpec::small_conv_net(1, 2, depth)
        }
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            base_lr: 0.05,
            seed: 5,
            ..Default::default()
        }
    }

    fn run(depth: usize, cfg: &TrainConfig) -> (Vec<MetricsRecord>, Model<f32>) {
        let (tr, te) = (stripes(96, 1), stripes(40, 2));
        let mut model = Model::new(spec(depth), cfg.seed).unwrap();
        let records = train(
            &mut model,
            &tr,
            &te,
            cfg,
            &ExecConfig::default(),
            &[EnsembleRule::Vote],
            |_, _| Ok(()),
        )
        .unwrap();
        (records, model)
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        for depth in [0, 2] {
            let (records, _) = run(depth, &quick_cfg());
            assert_eq!(records.len(), 3);
            let last = records.last().unwrap();
            assert_eq!(last.per_head.len(), 2 * depth + 1);
            assert!(last.vote_top1 >= 0.95, "depth {depth}: {last:?}");
        }
    }

    #[test]
    fn identical_seeds_give_identical_records() {
        let cfg = TrainConfig {
            mixup_alpha: 0.4,
            label_smoothing: 0.1,
            pad_crop: 1,
            hflip: true,
            ..quick_cfg()
        };
        let (a, ma) = run(1, &cfg);
        let (b, mb) = run(1, &cfg);
        let lines = |r: &[MetricsRecord]| r.iter().map(|m| m.to_json()).collect::<Vec<_>>();
        assert_eq!(lines(&a), lines(&b));
        assert_eq!(ma.values(), mb.values());
    }

    #[test]
    fn frozen_backbone_only_moves_the_head() {
        let cfg = TrainConfig {
            freeze_backbone: true,
            epochs: 1,
            ..quick_cfg()
        };
        let before = Model::<f32>::new(spec(2), cfg.seed).unwrap();
        let (_, after) = run(2, &cfg);
        let backbone = |m: &Model<f32>| -> Vec<Tensor<f32>> {
            m.backbone.params().iter().map(|p| p.value.clone()).collect()
        };
        assert_eq!(backbone(&before), backbone(&after));
        assert_ne!(before.head.classifier.weight.value, after.head.classifier.weight.value);
    }

    #[test]
    fn divergence_restores_last_good_parameters() {
        let (tr, te) = (stripes(32, 1), stripes(8, 2));
        let cfg = TrainConfig {
            base_lr: 1e30,
            momentum: 0.0,
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
            epochs: 2,
            batch_size: 8,
            ..Default::default()
        };
        let mut model = Model::new(spec(1), 0).unwrap();
        let initial = model.values();
        let err = train(
            &mut model,
            &tr,
            &te,
            &cfg,
            &ExecConfig::default(),
            &[],
            |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 1, .. }), "{err:?}");
        assert_eq!(model.values(), initial);
    }

    #[test]
    fn class_count_mismatch_is_rejected() {
        let tr = stripes(16, 1);
        let mut model = Model::new(
            ModelSpec {
                classes: 3,
                ..spec(1)
            },
            0,
        )
        .unwrap();
        let err = train(
            &mut model,
            &tr,
            &tr,
            &quick_cfg(),
            &ExecConfig::default(),
            &[],
            |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn one_sgd_step_matches_hand_computation() {
        // loss = 0.5 * (w0 * x - 1)^2 + 0.5 * (w1 - 2)^2 at w = (0.5, 0), x = 2
        let mut w0 = Param::new("w0", Tensor::<f64>::full([1], 0.5));
        let mut w1 = Param::new("w1", Tensor::<f64>::full([1], 0.0));
        w0.grad = Tensor::full([1], (0.5 * 2.0 - 1.0) * 2.0);
        w1.grad = Tensor::full([1], 0.0 - 2.0);
        let mut sgd = Sgd::new(0.9, 0.0);
        sgd.step(vec![&mut w0, &mut w1], 0.1);
        assert_eq!(w0.value.data()[0], 0.5);
        assert!((w1.value.data()[0] - 0.2).abs() < 1e-15);
    }
}
