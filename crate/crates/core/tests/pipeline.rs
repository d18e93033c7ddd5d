mod common;

use ffc_core::data::{channel_stats, Dataset};
use ffc_core::train::{ensemble_models, Checkpoint};
use ffc_core::{
    evaluate, load_checkpoint, predict, save_checkpoint, train, EnsembleRule, ExecConfig, Model,
    ModelSpec, Tensor, TrainConfig,
};

/// Three classes marked by which third of a 9x9 image is bright.
fn thirds(n: usize, offset: usize) -> Dataset {
    let labels: Vec<usize> = (0..n).map(|i| (i + offset) % 3).collect();
    let mut images = Tensor::<f32>::zeros([n, 1, 9, 9]);
    for (i, &label) in labels.iter().enumerate() {
        for (p, v) in images.row_mut(i).iter_mut().enumerate() {
            let band = (p / 9) / 3;
            *v = if band == label { 0.9 } else { ((p * 31 + i * 7) % 10) as f32 * 0.02 };
        }
    }
    Dataset::new(images, labels, 3).unwrap()
}

fn trained(depth: usize, seed: u64) -> Model<f32> {
    let train_set = thirds(90, 0);
    let (mean, std) = channel_stats(&train_set);
    let spec = ModelSpec {
        widths: vec![4, 8],
        norm_mean: mean,
        norm_std: std,
        ..ModelSpec::small_conv_net(1, 3, depth)
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 15,
        seed,
        ..TrainConfig::default()
    };
    let mut model = Model::new(spec, seed).unwrap();
    train(&mut model, &train_set, &thirds(30, 1), &cfg, &ExecConfig::default(), &[], |_, _| Ok(()))
        .unwrap();
    model
}

#[test]
fn checkpointed_model_evaluates_identically() {
    let model = trained(3, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ffck");
    save_checkpoint(&model, &Default::default(), &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.spec, model.spec);
    let test_set = thirds(40, 2);
    let rules = EnsembleRule::ALL;
    let exec = ExecConfig::default();
    assert_eq!(
        evaluate(&model, &test_set, &rules, &exec).unwrap(),
        evaluate(&loaded, &test_set, &rules, &exec).unwrap()
    );
    // the checkpoint holds 2dC more values than a plain-head one
    let plain = Checkpoint::from_model(&trained(0, 1), &Default::default());
    let ffc = Checkpoint::read(&path).unwrap();
    let count = |c: &Checkpoint| c.tensors.iter().map(|(_, t)| t.len()).sum::<usize>();
    assert_eq!(count(&ffc) - count(&plain), 2 * 3 * 8);
}

#[test]
fn evaluated_vote_equals_revote_of_dumped_logits() {
    let model = trained(3, 2);
    let test_set = thirds(60, 0);
    let exec = ExecConfig::default();
    let preds = predict(&model, &test_set, &exec).unwrap();
    let record = evaluate(&model, &test_set, &[EnsembleRule::Vote], &exec).unwrap();
    let oracle = common::revote_all(&preds.logits);
    let correct = oracle.iter().zip(&test_set.labels).filter(|(p, l)| p == l).count();
    assert_eq!(record.vote_top1, correct as f64 / test_set.len() as f64);
    for h in &record.per_head {
        assert!((0.0..=1.0).contains(&h.top1) && (0.0..=1.0).contains(&h.mean_confidence));
    }
    assert!((0.0..=1.0).contains(&record.avg_softmax_top1));
}

#[test]
fn both_heads_learn_and_ensembles_are_consistent() {
    let plain = trained(0, 3);
    let ffc = trained(3, 3);
    let test_set = thirds(60, 5);
    let exec = ExecConfig::default();
    for m in [&plain, &ffc] {
        let r = evaluate(m, &test_set, &[], &exec).unwrap();
        assert!(r.vote_top1 >= 0.9, "{r:?}");
    }
    let same = ensemble_models(&[&ffc, &ffc], &test_set, &exec).unwrap();
    assert_eq!(same.ensembled, same.individual[0]);
    let mixed = ensemble_models(&[&plain, &ffc], &test_set, &exec).unwrap();
    assert!((0.0..=1.0).contains(&mixed.ensembled));
}
