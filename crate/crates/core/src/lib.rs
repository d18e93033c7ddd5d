//! CPU training toolkit for sequential feature filtering classifier heads.
//!
//! A small tensor library with im2col convolution, hand-written backward
//! passes, the FFC head with its voting and averaging rules, dataset
//! parsers, and the training/evaluation loop used by the `ffc` binary.

pub mod data;
pub mod error;
pub mod ffc;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use ffc::{
    combine_heads, ensemble_predict, head_statistics, overhead_report, train_loss, EnsembleRule,
    FfcHead, FfcOutputs, HeadReport, HeadStats, OverheadReport,
};
pub use model::{Model, ModelSpec};
pub use tensor::{Scalar, Tensor};
pub use train::{
    ensemble_models, evaluate, grad_check, load_checkpoint, predict, save_checkpoint, train,
    ExecConfig, MetricsRecord, TrainConfig,
};
