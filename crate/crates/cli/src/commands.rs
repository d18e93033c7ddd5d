use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ffc_core::data::{channel_stats, Dataset, DatasetKind, Split};
use ffc_core::train::{
    ensemble_models, evaluate, grad_check, predict, write_record, Checkpoint, Component,
    GradCheckConfig,
};
use ffc_core::{overhead_report, Model, ModelSpec};

use crate::config::RunConfig;
use crate::error::CliError;

pub const RESOLVED_CONFIG: &str = "resolved.cfg";
pub const CHECKPOINT_FILE: &str = "model.ffck";
pub const METRICS_FILE: &str = "metrics.jsonl";

fn load_split(
    kind: DatasetKind,
    dir: &Path,
    split: Split,
    limit: Option<usize>,
) -> Result<Dataset, CliError> {
    let ds = kind.load(dir, split).map_err(|e| {
        CliError::runtime(format!("loading {kind} {split:?} split from {}: {e}", dir.display()))
    })?;
    Ok(match limit {
        Some(n) if n < ds.len() => ds.take(n),
        _ => ds,
    })
}

/// Creates `out_dir` (if given) and writes the resolved config into it.
fn prepare_out_dir(cfg: &RunConfig) -> Result<Option<PathBuf>, CliError> {
    let Some(dir) = &cfg.out_dir else {
        return Ok(None);
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_text())?;
    Ok(Some(dir.clone()))
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::read(path)
        .map_err(|e| CliError::runtime(format!("reading checkpoint {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Model<f32>, CliError> {
    read_checkpoint(path)?
        .to_model()
        .map_err(|e| CliError::runtime(format!("checkpoint {}: {e}", path.display())))
}

fn single_checkpoint(cfg: &RunConfig) -> Result<&Path, CliError> {
    match cfg.checkpoints.as_slice() {
        [one] => Ok(one),
        [] => Err(CliError::usage("missing required key `checkpoint`")),
        _ => Err(CliError::usage(format!(
            "`{}` takes one checkpoint (key `checkpoint`)",
            cfg.command
        ))),
    }
}

/// Writes through a temporary file so an interrupted run never leaves a
/// half-written checkpoint behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let (kind, dir) = cfg.require_dataset()?;
    cfg.require_out_dir()?;
    let init = cfg.init.as_deref().map(read_checkpoint).transpose()?;
    let out_dir = prepare_out_dir(cfg)?.expect("out_dir checked above");
    let train_set = load_split(kind, &dir, Split::Train, cfg.train_limit)?;
    let eval_set = load_split(kind, &dir, Split::Test, cfg.eval_limit)?;

    let (norm_mean, norm_std) = match &init {
        Some(ck) => {
            let spec = ModelSpec::from_kv(&ck.config)?;
            (spec.norm_mean, spec.norm_std)
        }
        None => channel_stats(&train_set),
    };
    let spec = ModelSpec {
        widths: cfg.widths.clone(),
        se_stages: cfg.se_stages.clone(),
        se_reduction: cfg.se_reduction,
        norm_mean,
        norm_std,
        ..ModelSpec::small_conv_net(kind.in_channels(), kind.classes(), cfg.effective_depth())
    };
    let mut model = Model::new(spec, cfg.train.seed)?;
    if let Some(ck) = &init {
        let copied = model.load_matching(&ck.tensors);
        if copied.is_empty() {
            return Err(CliError::usage(
                "key `init`: no tensor in the checkpoint matches the model",
            ));
        }
        println!("initialized {} of {} tensors from init checkpoint", copied.len(), model.params().len());
    }
    println!(
        "training {} parameters on {} samples, evaluating on {}",
        model.param_count(),
        train_set.len(),
        eval_set.len()
    );

    let mut extra: BTreeMap<String, String> = cfg.train.to_kv();
    extra.insert("data.dataset".into(), kind.to_string());
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let mut metrics = fs::File::create(out_dir.join(METRICS_FILE))?;
    let result = ffc_core::train(
        &mut model,
        &train_set,
        &eval_set,
        &cfg.train,
        &cfg.exec,
        &cfg.rules,
        |m, record| {
            write_record(&mut metrics, record)?;
            metrics.flush()?;
            write_atomic(&ckpt_path, &Checkpoint::from_model(m, &extra).to_bytes())?;
            println!(
                "epoch {:>3}  loss {:.4}  lr {:.5}  vote {:.2}%  avg {:.2}%",
                record.epoch.unwrap_or(0),
                record.train_loss.unwrap_or(f64::NAN),
                record.lr.unwrap_or(f64::NAN),
                100.0 * record.vote_top1,
                100.0 * record.avg_softmax_top1
            );
            Ok(())
        },
    );
    match result {
        Ok(records) => {
            if let Some(last) = records.last() {
                print!("{}", last.report());
            }
            println!("checkpoint: {}", ckpt_path.display());
            Ok(())
        }
        Err(e @ ffc_core::Error::Diverged { .. }) => {
            let kept = if ckpt_path.exists() {
                format!("last good checkpoint kept at {}", ckpt_path.display())
            } else {
                "no epoch completed, no checkpoint written".to_string()
            };
            Err(CliError::runtime(format!("{e}; {kept}")))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let (kind, dir) = cfg.require_dataset()?;
    let path = single_checkpoint(cfg)?;
    let model = load_model(path)?;
    let out_dir = prepare_out_dir(cfg)?;
    let dataset = load_split(kind, &dir, Split::Test, cfg.eval_limit)?;
    let record = evaluate(&model, &dataset, &cfg.rules, &cfg.exec)?;
    let report = record.report().to_string();
    print!("{report}");
    if let Some(out) = out_dir {
        let mut f = fs::File::create(out.join(METRICS_FILE))?;
        write_record(&mut f, &record)?;
        fs::write(out.join("report.txt"), report)?;
    }
    Ok(())
}

pub fn ensemble_eval(cfg: &RunConfig) -> Result<(), CliError> {
    let (kind, dir) = cfg.require_dataset()?;
    if cfg.checkpoints.len() < 2 {
        return Err(CliError::usage(
            "`ensemble-eval` needs at least two values for key `checkpoint`",
        ));
    }
    let models = cfg
        .checkpoints
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<Vec<_>, _>>()?;
    let out_dir = prepare_out_dir(cfg)?;
    let dataset = load_split(kind, &dir, Split::Test, cfg.eval_limit)?;
    let refs: Vec<&Model<f32>> = models.iter().collect();
    let result = ensemble_models(&refs, &dataset, &cfg.exec)?;
    let mut text = String::new();
    for (path, acc) in cfg.checkpoints.iter().zip(&result.individual) {
        text += &format!("{:>7.2}%  {}\n", 100.0 * acc, path.display());
    }
    text += &format!("{:>7.2}%  ensembled ({} models)\n", 100.0 * result.ensembled, models.len());
    print!("{text}");
    if let Some(out) = out_dir {
        fs::write(out.join("ensemble.txt"), text)?;
    }
    Ok(())
}

pub fn stats(cfg: &RunConfig) -> Result<(), CliError> {
    let (kind, dir) = cfg.require_dataset()?;
    let model = load_model(single_checkpoint(cfg)?)?;
    let out_dir = prepare_out_dir(cfg)?;
    let dataset = load_split(kind, &dir, Split::Test, cfg.eval_limit)?;
    let dump = predict(&model, &dataset, &cfg.exec)?.dump();
    match out_dir {
        Some(out) => {
            let path = out.join("stats.tsv");
            fs::write(&path, dump)?;
            println!("wrote {}", path.display());
        }
        None => print!("{dump}"),
    }
    Ok(())
}

pub fn grad_check_cmd(components: &[Component], gc: &GradCheckConfig) -> Result<(), CliError> {
    let selected = if components.is_empty() {
        Component::ALL.to_vec()
    } else {
        components.to_vec()
    };
    let report = grad_check(&selected, gc)?;
    print!("{report}");
    let offenders = report.offenders();
    if offenders.is_empty() {
        return Ok(());
    }
    let names: Vec<String> = offenders
        .iter()
        .map(|e| format!("{} ({:.3e})", e.component, e.max_rel_error))
        .collect();
    Err(CliError::runtime(format!(
        "gradient check failed: {}",
        names.join(", ")
    )))
}

pub fn overhead(channels: usize, classes: usize, depth: usize) -> Result<(), CliError> {
    if channels == 0 || classes == 0 {
        return Err(CliError::usage("channels and classes must be positive"));
    }
    println!("{}", overhead_report(channels, classes, depth));
    Ok(())
}
