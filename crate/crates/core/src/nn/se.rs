use rand::Rng;

use super::{missing_forward, Layer, Linear, Param, Relu};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Squeeze-and-excitation channel gating:
/// `s = sigmoid(W2 relu(W1 avgpool(x) + b1) + b2)`, `y = x * s` per channel.
pub struct SeBlock<T: Scalar = f32> {
    pub squeeze: Linear<T>,
    pub excite: Linear<T>,
    relu: Relu<T>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Scalar> SeBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::config(format!(
                "SE reduction {reduction} does not divide {channels} channels"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self::from_layers(
            Linear::new(&format!("{name}.squeeze"), channels, hidden, rng),
            Linear::new(&format!("{name}.excite"), hidden, channels, rng),
        ))
    }

    pub fn from_layers(squeeze: Linear<T>, excite: Linear<T>) -> Self {
        assert_eq!(squeeze.outputs(), excite.inputs());
        assert_eq!(squeeze.inputs(), excite.outputs());
        Self {
            squeeze,
            excite,
            relu: Relu::new(),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.squeeze.inputs()
    }

    fn pooled(&self, x: &Tensor<T>) -> Result<(Tensor<T>, usize)> {
        match *x.shape() {
            [n, c, h, w] if c == self.channels() => {
                let area = T::from_usize_lossy(h * w);
                let means = x
                    .data()
                    .chunks(h * w)
                    .map(|p| p.iter().copied().sum::<T>() / area)
                    .collect();
                Ok((Tensor::new([n, c], means)?, h * w))
            }
            _ => Err(Error::Dimension {
                op: "se_block",
                lhs: x.shape().to_vec(),
                rhs: vec![self.channels()],
            }),
        }
    }

    fn gate(x: &Tensor<T>, s: &Tensor<T>, area: usize) -> Tensor<T> {
        let mut y = x.clone();
        for (plane, &g) in y.data_mut().chunks_mut(area).zip(s.data()) {
            plane.iter_mut().for_each(|v| *v = *v * g);
        }
        y
    }
}

impl<T: Scalar> Layer<T> for SeBlock<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (pooled, area) = self.pooled(x)?;
        let a1 = self.squeeze.forward(&pooled)?;
        let h = self.relu.forward(&a1)?;
        let s = self.excite.forward(&h)?.map(sigmoid);
        let y = Self::gate(x, &s, area);
        self.cache = Some((x.clone(), s));
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (pooled, area) = self.pooled(x)?;
        let h = self.relu.infer(&self.squeeze.infer(&pooled)?)?;
        let s = self.excite.infer(&h)?.map(sigmoid);
        Ok(Self::gate(x, &s, area))
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, s) = self.cache.take().ok_or_else(|| missing_forward("se_block"))?;
        x.check_same_shape(grad, "se_block backward")?;
        let area = x.len() / s.len();
        // gradient through the gate value s
        let dpre: Vec<T> = x
            .data()
            .chunks(area)
            .zip(grad.data().chunks(area))
            .zip(s.data())
            .map(|((xp, gp), &sv)| {
                let ds: T = xp.iter().zip(gp).map(|(&a, &b)| a * b).sum();
                ds * sv * (T::one() - sv)
            })
            .collect();
        let dpre = Tensor::new(s.shape().to_vec(), dpre)?;
        let dh = self.excite.backward(&dpre)?;
        let da1 = self.relu.backward(&dh)?;
        let dpooled = self.squeeze.backward(&da1)?;
        let inv_area = T::one() / T::from_usize_lossy(area);
        let mut dx = Self::gate(grad, &s, area);
        for (plane, &dp) in dx.data_mut().chunks_mut(area).zip(dpooled.data()) {
            let share = dp * inv_area;
            plane.iter_mut().for_each(|v| *v = *v + share);
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.squeeze.params();
        p.extend(self.excite.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.squeeze.params_mut();
        p.extend(self.excite.params_mut());
        p
    }

    fn kink_distance(&self) -> Option<f64> {
        self.relu.kink_distance()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn saturated_gate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut se = SeBlock::<f64>::new("se", 4, 2, &mut rng).unwrap();
        se.excite.bias.value.fill(60.0);
        let x = Tensor::<f64>::from_fn([2, 4, 3, 3], |_| rng.random_range(-1.0..1.0));
        let y = se.infer(&x).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_gate_zeroes_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut se = SeBlock::<f64>::new("se", 4, 2, &mut rng).unwrap();
        se.excite.weight.value.fill(0.0);
        se.excite.bias.value.fill(60.0);
        // s_1 = sigmoid(-inf) = 0
        se.excite.bias.value.data_mut()[1] = f64::NEG_INFINITY;
        let x = Tensor::<f64>::full([1, 4, 2, 2], 3.0);
        let y = se.infer(&x).unwrap();
        assert!(y.data()[4..8].iter().all(|&v| v == 0.0));
        assert!(y.data()[..4].iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn reduction_must_divide_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            SeBlock::<f32>::new("se", 6, 4, &mut rng),
            Err(Error::Config(_))
        ));
    }
}
