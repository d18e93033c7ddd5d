use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Classification targets: class ids, or one probability row per sample.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a, T: Scalar = f32> {
    Hard(&'a [usize]),
    Soft(&'a Tensor<T>),
}

impl<T: Scalar> Targets<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(labels) => labels.len(),
            Targets::Soft(q) => q.dim(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-wise softmax of an `N x K` matrix.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.shape().last().copied().unwrap_or(1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}

/// Mixes a target distribution with the uniform one:
/// `(1 - smoothing) * q + smoothing / K`.
pub fn smooth_targets<T: Scalar>(
    targets: Targets<'_, T>,
    classes: usize,
    smoothing: f64,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&smoothing) {
        return Err(Error::config(format!(
            "label smoothing {smoothing} outside [0, 1]"
        )));
    }
    let keep = T::from_f64_lossy(1.0 - smoothing);
    let floor = T::from_f64_lossy(smoothing / classes as f64);
    match targets {
        Targets::Hard(labels) => {
            let mut q = Tensor::full([labels.len(), classes], floor);
            for (i, &label) in labels.iter().enumerate() {
                if label >= classes {
                    return Err(Error::LabelRange { label, classes });
                }
                let v = q.get(&[i, label]);
                q.set(&[i, label], v + keep);
            }
            Ok(q)
        }
        Targets::Soft(soft) => {
            if soft.rank() != 2 || soft.dim(1) != classes {
                return Err(Error::Dimension {
                    op: "smooth_targets",
                    lhs: soft.shape().to_vec(),
                    rhs: vec![soft.dim(0), classes],
                });
            }
            Ok(soft.map(|v| keep * v + floor))
        }
    }
}

/// Mean cross-entropy of `softmax(logits)` against the (optionally smoothed)
/// targets, and its gradient `(softmax - q) / N` with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: Targets<'_, T>,
    smoothing: f64,
) -> Result<(T, Tensor<T>)> {
    if logits.rank() != 2 || targets.len() != logits.dim(0) {
        return Err(Error::Dimension {
            op: "softmax_cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let (n, k) = (logits.dim(0), logits.dim(1));
    let q = smooth_targets(targets, k, smoothing)?;
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut grad = Tensor::zeros([n, k]);
    let mut loss = T::zero();
    for i in 0..n {
        let z = logits.row(i);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let log_total = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let qi = q.row(i);
        let g = grad.row_mut(i);
        for j in 0..k {
            let log_p = z[j] - max - log_total;
            loss = loss - qi[j] * log_p;
            g[j] = (log_p.exp() - qi[j]) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}
