use super::Param;
use crate::tensor::{Scalar, Tensor};

/// SGD with heavy-ball momentum and L2 weight decay:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * value
/// value <- value - lr * v
/// ```
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar = f32> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// Applies one update. `params` must be passed in the same order every call.
    pub fn step(&mut self, params: Vec<&mut Param<T>>, lr: f64) {
        if self.velocity.len() != params.len() {
            self.velocity = params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect();
        }
        let momentum = T::from_f64_lossy(self.momentum);
        let decay = T::from_f64_lossy(self.weight_decay);
        let lr = T::from_f64_lossy(lr);
        for (param, velocity) in params.into_iter().zip(&mut self.velocity) {
            let v = velocity.data_mut();
            let grad = param.grad.data();
            for ((vi, &g), w) in v.iter_mut().zip(grad).zip(param.value.data_mut()) {
                *vi = momentum * *vi + g + decay * *w;
                *w = *w - lr * *vi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64], grads: &[f64]) -> Param<f64> {
        let mut p = Param::new("p", Tensor::from_f64([values.len()], values).unwrap());
        p.grad = Tensor::from_f64([grads.len()], grads).unwrap();
        p
    }

    #[test]
    fn plain_sgd_moves_by_lr_times_grad() {
        let mut p = param(&[1.0, -2.0], &[0.5, -1.0]);
        Sgd::new(0.0, 0.0).step(vec![&mut p], 0.1);
        assert_eq!(p.value.data(), &[1.0 - 0.05, -2.0 + 0.1]);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = param(&[3.0, 4.0], &[0.0, 0.0]);
        let mut opt = Sgd::new(0.0, 0.0);
        opt.step(vec![&mut p], 0.5);
        opt.step(vec![&mut p], 0.5);
        assert_eq!(p.value.data(), &[3.0, 4.0]);
    }

    #[test]
    fn two_momentum_steps_match_hand_unroll() {
        // w0 = 1, g = 2 (held), wd = 0.01, mu = 0.9, lr = 0.1
        // v1 = 2 + 0.01*1 = 2.01            w1 = 1 - 0.201 = 0.799
        // v2 = 0.9*2.01 + 2 + 0.01*0.799    w2 = 0.799 - 0.1*v2
        let mut p = param(&[1.0], &[2.0]);
        let mut opt = Sgd::new(0.9, 0.01);
        opt.step(vec![&mut p], 0.1);
        assert!((p.value.data()[0] - 0.799).abs() < 1e-15);
        opt.step(vec![&mut p], 0.1);
        let v2 = 0.9 * 2.01 + 2.0 + 0.01 * 0.799;
        assert!((p.value.data()[0] - (0.799 - 0.1 * v2)).abs() < 1e-15);
    }
}
