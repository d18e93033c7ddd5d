use super::{missing_forward, Layer};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn nchw<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::Dimension {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![4],
        }),
    }
}

struct MaxPoolCache {
    input_shape: [usize; 4],
    /// Flat input offset of the winning element of every output cell.
    winners: Vec<usize>,
    margin: f64,
}

/// Max pooling with a square window; trailing rows/columns that do not fill
/// a window are dropped.
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    cache: Option<MaxPoolCache>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::config("max-pool window and stride must be positive"));
        }
        if self.kernel > h || self.kernel > w {
            return Err(Error::config(format!(
                "max-pool window {} larger than input {h}x{w}",
                self.kernel
            )));
        }
        Ok(((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }

    fn run<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MaxPoolCache)> {
        let [n, c, h, w] = nchw(x, "max_pool")?;
        let (ho, wo) = self.output_hw(h, w)?;
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut winners = Vec::with_capacity(n * c * ho * wo);
        let mut margin = f64::INFINITY;
        let data = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    let mut runner_up = f64::NEG_INFINITY;
                    for ky in 0..self.kernel {
                        for kx in 0..self.kernel {
                            let at = base + (oy * self.stride + ky) * w + ox * self.stride + kx;
                            if at == best {
                                continue;
                            }
                            if data[at] > data[best] {
                                runner_up = runner_up.max(data[best].to_f64_lossy());
                                best = at;
                            } else {
                                runner_up = runner_up.max(data[at].to_f64_lossy());
                            }
                        }
                    }
                    let top = data[best].to_f64_lossy();
                    // a window of exact zeros comes from ReLU-clipped inputs,
                    // which stay zero under small perturbations
                    if !(top == 0.0 && runner_up == 0.0) {
                        margin = margin.min(top - runner_up);
                    }
                    out.data_mut()[(plane * ho + oy) * wo + ox] = data[best];
                    winners.push(best);
                }
            }
        }
        Ok((
            out,
            MaxPoolCache {
                input_shape: [n, c, h, w],
                winners,
                margin,
            },
        ))
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cache) = self.run(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x)?.0)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_forward("max_pool"))?;
        if grad.len() != cache.winners.len() {
            return Err(Error::Dimension {
                op: "max_pool backward",
                lhs: grad.shape().to_vec(),
                rhs: vec![cache.winners.len()],
            });
        }
        let mut dx = Tensor::zeros(cache.input_shape);
        let d = dx.data_mut();
        for (&at, &g) in cache.winners.iter().zip(grad.data()) {
            d[at] = d[at] + g;
        }
        Ok(dx)
    }

    fn kink_distance(&self) -> Option<f64> {
        self.cache.as_ref().map(|c| c.margin)
    }
}

/// Spatial mean over `H x W`, flattened to `N x C`.
#[derive(Default)]
pub struct GlobalAvgPool {
    cache: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { cache: None }
    }

    fn run<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = nchw(x, "global_avg_pool")?;
        let area = T::from_usize_lossy(h * w);
        let data: Vec<T> = x
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() / area)
            .collect();
        Tensor::new([n, c], data)
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = Self::run(x)?;
        self.cache = Some(nchw(x, "global_avg_pool")?);
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Self::run(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = self
            .cache
            .take()
            .ok_or_else(|| missing_forward("global_avg_pool"))?;
        if grad.shape() != [n, c] {
            return Err(Error::Dimension {
                op: "global_avg_pool backward",
                lhs: grad.shape().to_vec(),
                rhs: vec![n, c],
            });
        }
        let area = T::from_usize_lossy(h * w);
        let mut dx = Tensor::zeros([n, c, h, w]);
        for (plane, &g) in dx.data_mut().chunks_mut(h * w).zip(grad.data()) {
            plane.fill(g / area);
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn global_avg_pool_mean() {
        let x = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = GlobalAvgPool::new().infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn global_avg_pool_backward_is_uniform() {
        let mut gap = GlobalAvgPool::new();
        let x = Tensor::<f64>::zeros([1, 2, 2, 3]);
        Layer::<f64>::forward(&mut gap, &x).unwrap();
        let g = Tensor::<f64>::from_f64([1, 2], &[6.0, -12.0]).unwrap();
        let dx = gap.backward(&g).unwrap();
        assert!(dx.data()[..6].iter().all(|&v| v == 1.0));
        assert!(dx.data()[6..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn max_pool_hand_case() {
        let x = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = MaxPool2d::new(2, 2).infer(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn max_pool_drops_ragged_edge() {
        let x = Tensor::<f64>::from_fn([1, 1, 7, 7], |i| i as f64);
        let y = MaxPool2d::new(2, 2).infer(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[0], 8.0);
    }

    #[test]
    fn max_pool_window_too_large() {
        let x = Tensor::<f64>::zeros([1, 1, 1, 3]);
        assert!(matches!(
            MaxPool2d::new(2, 2).infer(&x),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let mut pool = MaxPool2d::new(2, 2);
        let x = Tensor::<f64>::from_f64([1, 1, 2, 2], &[1.0, 5.0, 3.0, 4.0]).unwrap();
        pool.forward(&x).unwrap();
        assert_eq!(Layer::<f64>::kink_distance(&pool), Some(1.0));
        let dx = pool.backward(&Tensor::full([1, 1, 1, 1], 2.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
