use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Inputs blended with a permuted copy of the batch, and the matching soft labels.
#[derive(Debug, Clone)]
pub struct MixedBatch<T: Scalar = f32> {
    pub inputs: Tensor<T>,
    pub targets: Tensor<T>,
    pub lambda: f64,
}

/// Draws from `Beta(alpha, alpha)` as `X / (X + Y)` with `X, Y ~ Gamma(alpha, 1)`.
pub fn sample_beta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::config(format!("mixup alpha {alpha}: {e}")))?;
    loop {
        let x = gamma.sample(rng);
        let y = gamma.sample(rng);
        // both draws can underflow to zero for very small alpha
        if x + y > 0.0 {
            return Ok(x / (x + y));
        }
    }
}

/// Mixes sample `i` with sample `partner[i]` using weight `lambda`.
pub fn mixup_with<T: Scalar>(
    x: &Tensor<T>,
    labels: &[usize],
    classes: usize,
    lambda: f64,
    partner: &[usize],
) -> Result<MixedBatch<T>> {
    let n = labels.len();
    if x.rank() == 0 || x.dim(0) != n || partner.len() != n {
        return Err(Error::Dimension {
            op: "mixup",
            lhs: x.shape().to_vec(),
            rhs: vec![n, partner.len()],
        });
    }
    let keep = T::from_f64_lossy(lambda);
    let other = T::from_f64_lossy(1.0 - lambda);
    let mut inputs = Tensor::zeros(x.shape().to_vec());
    let mut targets = Tensor::zeros([n, classes]);
    for i in 0..n {
        let j = partner[i];
        for ((o, &a), &b) in inputs.row_mut(i).iter_mut().zip(x.row(i)).zip(x.row(j)) {
            *o = keep * a + other * b;
        }
        for &label in &[labels[i], labels[j]] {
            if label >= classes {
                return Err(Error::LabelRange { label, classes });
            }
        }
        let row = targets.row_mut(i);
        row[labels[i]] = row[labels[i]] + keep;
        row[labels[j]] = row[labels[j]] + other;
    }
    Ok(MixedBatch {
        inputs,
        targets,
        lambda,
    })
}

/// Mixup with `lambda ~ Beta(alpha, alpha)` and a random partner permutation.
pub fn mixup_batch<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    labels: &[usize],
    classes: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<MixedBatch<T>> {
    if labels.len() < 2 {
        return Err(Error::config("mixup needs a batch of at least two samples"));
    }
    if alpha <= 0.0 {
        return Err(Error::config("mixup alpha must be positive"));
    }
    let lambda = sample_beta(alpha, rng)?;
    let mut partner: Vec<usize> = (0..labels.len()).collect();
    partner.shuffle(rng);
    mixup_with(x, labels, classes, lambda, &partner)
}
