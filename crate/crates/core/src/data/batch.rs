use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AugmentPolicy, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
    /// Dataset rows the batch was drawn from.
    pub indices: Vec<usize>,
}

/// Seeded mini-batch stream over a dataset. The final partial batch is kept.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    policy: &'a AugmentPolicy,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    rng: ChaCha8Rng,
}

/// Generator for one (seed, epoch) pair. Stream `2 * epoch` drives the
/// permutation, stream `2 * epoch + 1` the augmentation.
fn stream(seed: u64, epoch: usize, which: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * epoch as u64 + which);
    rng
}

pub fn batch_iter<'a>(
    dataset: &'a Dataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: usize,
    policy: &'a AugmentPolicy,
) -> Result<Batches<'a>> {
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(Error::config(format!(
            "batch size {batch_size} must be in 1..={}",
            dataset.len()
        )));
    }
    policy.validate(dataset.image_shape().0)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if shuffle {
        order.shuffle(&mut stream(seed, epoch, 0));
    }
    Ok(Batches {
        dataset,
        policy,
        order,
        batch_size,
        cursor: 0,
        rng: stream(seed, epoch, 1),
    })
}

impl Batches<'_> {
    pub fn batch_count(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        let shape = self.dataset.image_shape();
        let per = shape.0 * shape.1 * shape.2;
        let mut x = Tensor::zeros([indices.len(), shape.0, shape.1, shape.2]);
        for (slot, &row) in x.data_mut().chunks_mut(per).zip(&indices) {
            self.policy
                .apply(self.dataset.images.row(row), shape, &mut self.rng, slot);
        }
        let labels = indices.iter().map(|&i| self.dataset.labels[i]).collect();
        Some(Batch { x, labels, indices })
    }
}
