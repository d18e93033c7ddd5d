use super::{missing_forward, Layer};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Default)]
pub struct Relu<T: Scalar = f32> {
    cache: Option<Tensor<T>>,
    kink: Option<f64>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self {
            cache: None,
            kink: None,
        }
    }
}

pub(crate) fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.kink = x
            .data()
            .iter()
            .map(|v| v.to_f64_lossy().abs())
            .reduce(f64::min);
        self.cache = Some(x.clone());
        Ok(relu(x))
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu(x))
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| missing_forward("relu"))?;
        if grad.shape() != x.shape() {
            return Err(Error::Dimension {
                op: "relu backward",
                lhs: grad.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        x.zip_map(grad, |v, g| if v > T::zero() { g } else { T::zero() })
    }

    fn kink_distance(&self) -> Option<f64> {
        self.kink
    }
}
