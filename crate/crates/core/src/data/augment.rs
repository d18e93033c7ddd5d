use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Per-sample augmentation and per-channel normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    /// Zero-pad by this many pixels, then crop back at a random offset.
    pub pad_crop: usize,
    pub hflip: bool,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl AugmentPolicy {
    /// Normalization only.
    pub fn normalize_only(mean: Vec<f32>, std: Vec<f32>) -> Self {
        Self {
            pad_crop: 0,
            hflip: false,
            mean,
            std,
        }
    }

    /// No augmentation, no normalization.
    pub fn identity(channels: usize) -> Self {
        Self::normalize_only(vec![0.0; channels], vec![1.0; channels])
    }

    /// Same normalization with augmentation switched off.
    pub fn without_augmentation(&self) -> Self {
        Self::normalize_only(self.mean.clone(), self.std.clone())
    }

    pub fn augments(&self) -> bool {
        self.pad_crop > 0 || self.hflip
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::config(format!(
                "normalization has {} means and {} stds for {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("normalization std must be positive"));
        }
        Ok(())
    }

    /// Writes the augmented, normalized version of `src` (`C x H x W`) into `dst`.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        src: &[f32],
        (c, h, w): (usize, usize, usize),
        rng: &mut R,
        dst: &mut [f32],
    ) {
        let p = self.pad_crop as i64;
        let (dy, dx) = if p > 0 {
            (rng.random_range(-p..=p), rng.random_range(-p..=p))
        } else {
            (0, 0)
        };
        let flip = self.hflip && rng.random_bool(0.5);
        for ch in 0..c {
            let (mean, inv_std) = (self.mean[ch], 1.0 / self.std[ch]);
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            let out = &mut dst[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                let sy = y as i64 + dy;
                for x in 0..w {
                    let xx = if flip { w - 1 - x } else { x };
                    let sx = xx as i64 + dx;
                    let v = if sy >= 0 && sy < h as i64 && sx >= 0 && sx < w as i64 {
                        plane[sy as usize * w + sx as usize]
                    } else {
                        0.0
                    };
                    out[y * w + x] = (v - mean) * inv_std;
                }
            }
        }
    }
}

/// Per-channel mean and standard deviation over the whole dataset.
pub fn channel_stats(dataset: &Dataset) -> (Vec<f32>, Vec<f32>) {
    let (c, h, w) = dataset.image_shape();
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    for i in 0..dataset.len() {
        for (ch, plane) in dataset.images.row(i).chunks(h * w).enumerate() {
            for &v in plane {
                sum[ch] += v as f64;
                sq[ch] += (v as f64) * (v as f64);
            }
        }
    }
    let count = (dataset.len() * h * w).max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| ((s / count - m * m).max(0.0).sqrt().max(1e-6)) as f32)
        .collect();
    (mean.into_iter().map(|m| m as f32).collect(), std)
}
