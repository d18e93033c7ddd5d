use rand::Rng;

use super::{kaiming_uniform, missing_forward, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::ops::{col2im_cm_sample, im2col_cm_sample};
use crate::tensor::{gemm, ConvGeometry, Scalar, Tensor};

struct ConvCache<T: Scalar> {
    input: Tensor<T>,
    out_hw: (usize, usize),
}

/// 2-D convolution lowered to im2col + GEMM, one sample at a time.
///
/// Patch matrices are laid out channel-major (`(Cin*kh*kw) x (Ho*Wo)`) and
/// rebuilt in the backward pass rather than cached.
pub struct Conv2d<T: Scalar = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    geom: ConvGeometry,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self::from_params(
            name,
            kaiming_uniform([out_channels, in_channels, kernel, kernel], fan_in, rng),
            Tensor::zeros([out_channels]),
            stride,
            pad,
        )
    }

    pub fn from_params(
        name: &str,
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Self {
        assert_eq!(weight.rank(), 4);
        assert_eq!(bias.shape(), &[weight.dim(0)]);
        let geom = ConvGeometry::new(weight.dim(2), weight.dim(3), stride, pad);
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), bias),
            geom,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<([usize; 4], (usize, usize))> {
        let shape = match *x.shape() {
            [n, c, h, w] if c == self.in_channels() => [n, c, h, w],
            _ => {
                return Err(Error::Dimension {
                    op: "conv2d",
                    lhs: x.shape().to_vec(),
                    rhs: self.weight.value.shape().to_vec(),
                })
            }
        };
        let out_hw = self.geom.output_hw(shape[2], shape[3])?;
        Ok((shape, out_hw))
    }

    fn run(&self, x: &Tensor<T>) -> Result<(Tensor<T>, (usize, usize))> {
        let ([n, c, h, w], (ho, wo)) = self.check_input(x)?;
        let cout = self.out_channels();
        let patch = self.geom.patch_len(c);
        let spatial = ho * wo;
        let group = group_size(spatial, n);
        let mut out = Tensor::zeros([n, cout, ho, wo]);
        let mut cols = vec![T::zero(); patch * spatial * group];
        let mut y = vec![T::zero(); cout * spatial * group];
        for start in (0..n).step_by(group) {
            let m = group.min(n - start);
            let ld = m * spatial;
            for j in 0..m {
                im2col_cm_sample(
                    x.row(start + j),
                    (c, h, w),
                    &self.geom,
                    (ho, wo),
                    &mut cols[j * spatial..],
                    ld,
                );
            }
            // y (Cout x m*HoWo) = W (Cout x P) * cols (P x m*HoWo)
            gemm(
                cout,
                patch,
                ld,
                T::one(),
                self.weight.value.data(),
                (patch, 1),
                &cols,
                (ld, 1),
                T::zero(),
                &mut y,
                (ld, 1),
            );
            for j in 0..m {
                let dst = out.row_mut(start + j);
                for (o, plane) in dst.chunks_mut(spatial).enumerate() {
                    let b = self.bias.value.data()[o];
                    let src = &y[o * ld + j * spatial..o * ld + (j + 1) * spatial];
                    for (d, &v) in plane.iter_mut().zip(src) {
                        *d = v + b;
                    }
                }
            }
        }
        Ok((out, (ho, wo)))
    }
}

/// Samples lowered together so each GEMM sees a reasonably wide matrix.
fn group_size(spatial: usize, n: usize) -> usize {
    2048usize.div_ceil(spatial.max(1)).clamp(1, n.max(1))
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, out_hw) = self.run(x)?;
        self.cache = Some(ConvCache {
            input: x.clone(),
            out_hw,
        });
        Ok(y)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(x)?.0)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_forward("conv2d"))?;
        let x = &cache.input;
        let [n, c, h, w] = [x.dim(0), x.dim(1), x.dim(2), x.dim(3)];
        let (ho, wo) = cache.out_hw;
        let cout = self.out_channels();
        if grad.shape() != [n, cout, ho, wo] {
            return Err(Error::Dimension {
                op: "conv2d backward",
                lhs: grad.shape().to_vec(),
                rhs: vec![n, cout, ho, wo],
            });
        }
        let patch = self.geom.patch_len(c);
        let spatial = ho * wo;
        let group = group_size(spatial, n);
        let mut dx = Tensor::zeros(x.shape().to_vec());
        let mut cols = vec![T::zero(); patch * spatial * group];
        let mut dcols = vec![T::zero(); patch * spatial * group];
        let mut g = vec![T::zero(); cout * spatial * group];
        for start in (0..n).step_by(group) {
            let m = group.min(n - start);
            let ld = m * spatial;
            for j in 0..m {
                im2col_cm_sample(
                    x.row(start + j),
                    (c, h, w),
                    &self.geom,
                    (ho, wo),
                    &mut cols[j * spatial..],
                    ld,
                );
                for (o, plane) in grad.row(start + j).chunks(spatial).enumerate() {
                    g[o * ld + j * spatial..o * ld + (j + 1) * spatial].copy_from_slice(plane);
                }
            }
            // dW (Cout x P) += g (Cout x m*HoWo) * cols^T (m*HoWo x P)
            gemm(
                cout,
                ld,
                patch,
                T::one(),
                &g,
                (ld, 1),
                &cols,
                (1, ld),
                T::one(),
                self.weight.grad.data_mut(),
                (patch, 1),
            );
            for (db, row) in self.bias.grad.data_mut().iter_mut().zip(g.chunks(ld)) {
                *db = *db + row[..ld].iter().copied().sum();
            }
            // dcols (P x m*HoWo) = W^T (P x Cout) * g (Cout x m*HoWo)
            gemm(
                patch,
                cout,
                ld,
                T::one(),
                self.weight.value.data(),
                (1, patch),
                &g,
                (ld, 1),
                T::zero(),
                &mut dcols,
                (ld, 1),
            );
            for j in 0..m {
                col2im_cm_sample(
                    &dcols[j * spatial..],
                    (c, h, w),
                    &self.geom,
                    (ho, wo),
                    dx.row_mut(start + j),
                    ld,
                );
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
