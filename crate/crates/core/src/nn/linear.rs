use rand::Rng;

use super::{fan_in_uniform, missing_forward, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

/// Fully connected layer, `y = x W^T + b` with `W` of shape `out x in`.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self::from_params(
            name,
            fan_in_uniform([outputs, inputs], inputs, rng),
            Tensor::zeros([outputs]),
        )
    }

    pub fn from_params(name: &str, weight: Tensor<T>, bias: Tensor<T>) -> Self {
        assert_eq!(weight.rank(), 2);
        assert_eq!(bias.shape(), &[weight.dim(0)]);
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), bias),
            cache: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.dim(0)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        if x.rank() != 2 || x.dim(1) != self.inputs() {
            return Err(Error::Dimension {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: self.weight.value.shape().to_vec(),
            });
        }
        Ok(x.dim(0))
    }

    /// `y = x W^T + b` without shape checks or caching.
    pub(crate) fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, i, o) = (x.dim(0), self.inputs(), self.outputs());
        let mut y = Tensor::zeros([n, o]);
        for row in 0..n {
            y.row_mut(row).copy_from_slice(self.bias.value.data());
        }
        gemm(
            n,
            i,
            o,
            T::one(),
            x.data(),
            (i, 1),
            self.weight.value.data(),
            (1, i),
            T::one(),
            y.data_mut(),
            (o, 1),
        );
        y
    }

    /// Parameter gradients for input `x` and output gradient `grad`, plus the
    /// input gradient.
    pub(crate) fn accumulate(&mut self, x: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
        let (n, i, o) = (x.dim(0), self.inputs(), self.outputs());
        // dW += grad^T x
        gemm(
            o,
            n,
            i,
            T::one(),
            grad.data(),
            (1, o),
            x.data(),
            (i, 1),
            T::one(),
            self.weight.grad.data_mut(),
            (i, 1),
        );
        let db = self.bias.grad.data_mut();
        for row in 0..n {
            for (b, &g) in db.iter_mut().zip(grad.row(row)) {
                *b = *b + g;
            }
        }
        let mut dx = Tensor::zeros([n, i]);
        gemm(
            n,
            o,
            i,
            T::one(),
            grad.data(),
            (o, 1),
            self.weight.value.data(),
            (i, 1),
            T::zero(),
            dx.data_mut(),
            (i, 1),
        );
        dx
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let y = self.apply(x);
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        Ok(self.apply(x))
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| missing_forward("linear"))?;
        if grad.shape() != [x.dim(0), self.outputs()] {
            return Err(Error::Dimension {
                op: "linear backward",
                lhs: grad.shape().to_vec(),
                rhs: vec![x.dim(0), self.outputs()],
            });
        }
        Ok(self.accumulate(&x, grad))
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
