//! Datasets: MNIST IDX and CIFAR-10 binary parsers, augmentation and
//! seeded batch iteration.

mod augment;
mod batch;
mod cifar;
mod idx;

pub use augment::{channel_stats, AugmentPolicy};
pub use batch::{batch_iter, Batch, Batches};
pub use cifar::{
    encode_cifar10, load_cifar10_bin, load_cifar10_dir, parse_cifar10, CIFAR10_RECORD_LEN,
};
pub use idx::{
    encode_idx_images, encode_idx_labels, load_mnist_dir, load_mnist_idx, parse_idx_images,
    parse_idx_labels, parse_mnist, IdxImages, IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images scaled to `[0, 1]` with their class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `N x C x H x W`
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.rank() != 4 || images.dim(0) != labels.len() {
            return Err(Error::Dimension {
                op: "dataset",
                lhs: images.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelRange { label, classes });
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)`
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// The first `n` samples (or all of them).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let rows: Vec<usize> = (0..n).collect();
        self.select(&rows)
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            images: self.images.gather_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            classes: self.classes,
        }
    }
}

/// Datasets with a parser in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl DatasetKind {
    pub fn load(&self, dir: &Path, split: Split) -> Result<Dataset> {
        match self {
            DatasetKind::Mnist => load_mnist_dir(dir, split),
            DatasetKind::Cifar10 => load_cifar10_dir(dir, split),
        }
    }

    pub fn classes(&self) -> usize {
        10
    }

    pub fn in_channels(&self) -> usize {
        match self {
            DatasetKind::Mnist => 1,
            DatasetKind::Cifar10 => 3,
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::config(format!("unknown dataset `{other}` (mnist, cifar10)"))),
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        })
    }
}

pub(crate) fn scale_pixels(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}

pub(crate) fn unscale_pixel(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}
