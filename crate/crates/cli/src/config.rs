//! Flat `key = value` run configuration shared by every data-driven command.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use ffc_core::data::DatasetKind;
use ffc_core::nn::LrSchedule;
use ffc_core::{EnsembleRule, ExecConfig, ModelSpec, TrainConfig};

use crate::error::CliError;

/// Every key a config file may contain, in echo order.
pub const KEYS: &[&str] = &[
    "command",
    "dataset",
    "data_dir",
    "out_dir",
    "checkpoint",
    "init",
    "head",
    "depth",
    "widths",
    "se_stages",
    "se_reduction",
    "rules",
    "base_lr",
    "momentum",
    "weight_decay",
    "epochs",
    "batch_size",
    "schedule",
    "label_smoothing",
    "mixup_alpha",
    "seed",
    "pad_crop",
    "hflip",
    "freeze_backbone",
    "train_limit",
    "eval_limit",
    "threads",
    "deterministic",
];

/// Parses a config file. Blank lines and `#` comments are skipped; unknown
/// and repeated keys are errors.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("config line {}: expected `key = value`", i + 1))
        })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(CliError::usage(format!(
                "config line {}: unknown key `{key}`",
                i + 1
            )));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(CliError::usage(format!(
                "config line {}: key `{key}` given twice",
                i + 1
            )));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Plain,
    Ffc,
}

impl FromStr for HeadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(HeadKind::Plain),
            "ffc" => Ok(HeadKind::Ffc),
            _ => Err("expected `plain` or `ffc`".into()),
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Plain => "plain",
            HeadKind::Ffc => "ffc",
        })
    }
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub dataset: Option<DatasetKind>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    /// Checkpoint whose matching tensors seed the new model (fine-tuning).
    pub init: Option<PathBuf>,
    pub head: HeadKind,
    pub depth: usize,
    pub widths: Vec<usize>,
    pub se_stages: Vec<usize>,
    pub se_reduction: usize,
    pub rules: Vec<EnsembleRule>,
    pub train: TrainConfig,
    pub train_limit: Option<usize>,
    pub eval_limit: Option<usize>,
    pub exec: ExecConfig,
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::usage(format!("invalid value `{raw}` for key `{key}`")))
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Defaults for `command`, overridden by `map`.
    pub fn resolve(command: &str, map: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let small = ModelSpec::small_conv_net(1, 10, 3);
        let mut cfg = Self {
            command: command.to_string(),
            dataset: None,
            data_dir: None,
            out_dir: None,
            checkpoints: Vec::new(),
            init: None,
            head: HeadKind::Ffc,
            depth: small.depth,
            widths: small.widths,
            se_stages: small.se_stages,
            se_reduction: small.se_reduction,
            rules: vec![EnsembleRule::Vote, EnsembleRule::AvgSoftmax],
            train: TrainConfig::default(),
            train_limit: None,
            eval_limit: None,
            exec: ExecConfig::default(),
        };
        for (key, raw) in map {
            let raw = raw.as_str();
            let t = &mut cfg.train;
            match key.as_str() {
                "command" => {
                    if raw != command {
                        return Err(CliError::usage(format!(
                            "config is for `{raw}`, not `{command}` (key `command`)"
                        )));
                    }
                }
                "dataset" => {
                    cfg.dataset = Some(DatasetKind::from_str(raw).map_err(|e| {
                        CliError::usage(format!("key `dataset`: {e}"))
                    })?)
                }
                "data_dir" => cfg.data_dir = Some(PathBuf::from(raw)),
                "out_dir" => cfg.out_dir = Some(PathBuf::from(raw)),
                "checkpoint" => cfg.checkpoints = list(key, raw)?,
                "init" => cfg.init = Some(PathBuf::from(raw)),
                "head" => cfg.head = value(key, raw)?,
                "depth" => cfg.depth = value(key, raw)?,
                "widths" => cfg.widths = list(key, raw)?,
                "se_stages" => cfg.se_stages = list(key, raw)?,
                "se_reduction" => cfg.se_reduction = value(key, raw)?,
                "rules" => cfg.rules = list(key, raw)?,
                "base_lr" => t.base_lr = value(key, raw)?,
                "momentum" => t.momentum = value(key, raw)?,
                "weight_decay" => t.weight_decay = value(key, raw)?,
                "epochs" => t.epochs = value(key, raw)?,
                "batch_size" => t.batch_size = value(key, raw)?,
                "schedule" => t.schedule = value::<LrSchedule>(key, raw)?,
                "label_smoothing" => t.label_smoothing = value(key, raw)?,
                "mixup_alpha" => t.mixup_alpha = value(key, raw)?,
                "seed" => t.seed = value(key, raw)?,
                "pad_crop" => t.pad_crop = value(key, raw)?,
                "hflip" => t.hflip = value(key, raw)?,
                "freeze_backbone" => t.freeze_backbone = value(key, raw)?,
                "train_limit" => cfg.train_limit = Some(value(key, raw)?),
                "eval_limit" => cfg.eval_limit = Some(value(key, raw)?),
                "threads" => cfg.exec.threads = value(key, raw)?,
                "deterministic" => cfg.exec.deterministic = value(key, raw)?,
                other => return Err(CliError::usage(format!("unknown key `{other}`"))),
            }
        }
        if cfg.rules.is_empty() {
            return Err(CliError::usage("key `rules` must name at least one rule"));
        }
        cfg.train
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))?;
        cfg.exec
            .validate()
            .map_err(|e| CliError::usage(format!("key `threads`: {e}")))?;
        Ok(cfg)
    }

    /// Depth of the head actually built.
    pub fn effective_depth(&self) -> usize {
        match self.head {
            HeadKind::Plain => 0,
            HeadKind::Ffc => self.depth,
        }
    }

    pub fn require_dataset(&self) -> Result<(DatasetKind, PathBuf), CliError> {
        let kind = self
            .dataset
            .ok_or_else(|| CliError::usage("missing required key `dataset`"))?;
        let dir = self
            .data_dir
            .clone()
            .ok_or_else(|| CliError::usage("missing required key `data_dir`"))?;
        if !dir.is_dir() {
            return Err(CliError::usage(format!(
                "key `data_dir`: {} is not a directory",
                dir.display()
            )));
        }
        Ok((kind, dir))
    }

    pub fn require_out_dir(&self) -> Result<PathBuf, CliError> {
        self.out_dir
            .clone()
            .ok_or_else(|| CliError::usage("missing required key `out_dir`"))
    }

    /// The config file form; feeding it back through `--config` resolves to
    /// the same settings.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        let path = |p: &PathBuf| p.display().to_string();
        put("command", self.command.clone());
        if let Some(d) = self.dataset {
            put("dataset", d.to_string());
        }
        if let Some(p) = &self.data_dir {
            put("data_dir", path(p));
        }
        if let Some(p) = &self.out_dir {
            put("out_dir", path(p));
        }
        if !self.checkpoints.is_empty() {
            put(
                "checkpoint",
                self.checkpoints.iter().map(path).collect::<Vec<_>>().join(","),
            );
        }
        if let Some(p) = &self.init {
            put("init", path(p));
        }
        put("head", self.head.to_string());
        put("depth", self.depth.to_string());
        put("widths", join(&self.widths));
        put("se_stages", join(&self.se_stages));
        put("se_reduction", self.se_reduction.to_string());
        put("rules", join(&self.rules));
        for (k, v) in self.train.to_kv() {
            put(k.trim_start_matches("train."), v);
        }
        if let Some(n) = self.train_limit {
            put("train_limit", n.to_string());
        }
        if let Some(n) = self.eval_limit {
            put("eval_limit", n.to_string());
        }
        put("threads", self.exec.threads.to_string());
        put("deterministic", self.exec.deterministic.to_string());
        out
    }
}
