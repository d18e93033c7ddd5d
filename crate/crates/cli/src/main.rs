//! `ffc`: train, evaluate and inspect FFC-headed classifiers.

mod commands;
mod config;
mod error;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ffc_core::train::{Component, GradCheckConfig};

use crate::config::{parse_config_text, RunConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "ffc", version, about = "Sequential feature filtering classifier toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes model.ffck, metrics.jsonl and resolved.cfg to --out-dir.
    Train(RunArgs),
    /// Per-head and ensemble-rule accuracy of a checkpoint on the test split.
    Eval(RunArgs),
    /// Accuracy of averaging two or more checkpoints' predictions.
    EnsembleEval(RunArgs),
    /// Finite-difference gradient checks in 64-bit precision.
    GradCheck(GradCheckArgs),
    /// Per-sample dump of active units and per-head predictions.
    Stats(RunArgs),
    /// Parameter and FLOP overhead of an FFC head over a linear classifier.
    Overhead(OverheadArgs),
}

/// Flags mirror config keys (`--data-dir` is `data_dir`) and override the
/// file; a repeated flag keeps its last value.
#[derive(Args, Default)]
#[command(args_override_self = true)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// mnist or cifar10.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    /// Checkpoint to evaluate; repeat for ensemble-eval.
    #[arg(long = "checkpoint")]
    checkpoints: Vec<String>,
    /// Checkpoint whose matching tensors initialize training (fine-tuning).
    #[arg(long)]
    init: Option<String>,
    /// plain or ffc.
    #[arg(long)]
    head: Option<String>,
    /// Filtering stages of the ffc head.
    #[arg(long)]
    depth: Option<String>,
    /// Comma-separated stage widths.
    #[arg(long)]
    widths: Option<String>,
    /// Comma-separated 1-based stages followed by an SE block.
    #[arg(long)]
    se_stages: Option<String>,
    #[arg(long)]
    se_reduction: Option<String>,
    /// vote, avg-softmax or avg-logits; repeatable.
    #[arg(long = "rule")]
    rules: Vec<String>,
    #[arg(long)]
    base_lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// constant, step or cosine.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    label_smoothing: Option<String>,
    #[arg(long)]
    mixup_alpha: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    pad_crop: Option<String>,
    #[arg(long)]
    hflip: Option<String>,
    #[arg(long)]
    freeze_backbone: Option<String>,
    /// Use only the first N training samples.
    #[arg(long)]
    train_limit: Option<String>,
    /// Use only the first N test samples.
    #[arg(long)]
    eval_limit: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    deterministic: Option<String>,
}

impl RunArgs {
    fn resolve(&self, command: &str) -> Result<RunConfig, CliError> {
        let mut map = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::usage(format!("reading config {}: {e}", path.display()))
                })?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        let flags = [
            ("dataset", &self.dataset),
            ("data_dir", &self.data_dir),
            ("out_dir", &self.out_dir),
            ("init", &self.init),
            ("head", &self.head),
            ("depth", &self.depth),
            ("widths", &self.widths),
            ("se_stages", &self.se_stages),
            ("se_reduction", &self.se_reduction),
            ("base_lr", &self.base_lr),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("schedule", &self.schedule),
            ("label_smoothing", &self.label_smoothing),
            ("mixup_alpha", &self.mixup_alpha),
            ("seed", &self.seed),
            ("pad_crop", &self.pad_crop),
            ("hflip", &self.hflip),
            ("freeze_backbone", &self.freeze_backbone),
            ("train_limit", &self.train_limit),
            ("eval_limit", &self.eval_limit),
            ("threads", &self.threads),
            ("deterministic", &self.deterministic),
        ];
        for (key, v) in flags {
            if let Some(v) = v {
                map.insert(key.to_string(), v.clone());
            }
        }
        for (key, values) in [("checkpoint", &self.checkpoints), ("rules", &self.rules)] {
            if !values.is_empty() {
                map.insert(key.to_string(), values.join(","));
            }
        }
        RunConfig::resolve(command, &map)
    }
}

#[derive(Args)]
struct GradCheckArgs {
    /// Component to check; repeatable, all when omitted.
    #[arg(long = "component")]
    components: Vec<Component>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Coordinates probed per tensor per trial.
    #[arg(long, default_value_t = 24)]
    coords: usize,
}

#[derive(Args)]
struct OverheadArgs {
    /// Feature width C.
    #[arg(long)]
    channels: usize,
    /// Class count K.
    #[arg(long)]
    classes: usize,
    /// Filtering stages d.
    #[arg(long, default_value_t = 3)]
    depth: usize,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => commands::train(&a.resolve("train")?),
        Command::Eval(a) => commands::eval(&a.resolve("eval")?),
        Command::EnsembleEval(a) => commands::ensemble_eval(&a.resolve("ensemble-eval")?),
        Command::Stats(a) => commands::stats(&a.resolve("stats")?),
        Command::GradCheck(a) => {
            if a.trials == 0 || !(a.step > 0.0) || a.coords == 0 {
                return Err(CliError::usage("trials, step and coords must be positive"));
            }
            let cfg = GradCheckConfig {
                trials: a.trials,
                step: a.step,
                seed: a.seed,
                coords_per_tensor: a.coords,
            };
            commands::grad_check_cmd(&a.components, &cfg)
        }
        Command::Overhead(a) => commands::overhead(a.channels, a.classes, a.depth),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
