use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Strided `c = alpha * a * b + beta * c`.
///
/// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; each is described by a
/// (row stride, column stride) pair so transposes cost nothing.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    a_strides: (usize, usize),
    b: &[T],
    b_strides: (usize, usize),
    beta: T,
    c: &mut [T],
    c_strides: (usize, usize),
) {
    let extent = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(extent(m, k, a_strides) <= a.len(), "gemm: lhs out of bounds");
    assert!(extent(k, n, b_strides) <= b.len(), "gemm: rhs out of bounds");
    assert!(extent(m, n, c_strides) <= c.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the extents checked above bound every access the kernel makes.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = Tensor::zeros([m, n]);
    gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        (k, 1),
        b.data(),
        (n, 1),
        T::zero(),
        out.data_mut(),
        (n, 1),
    );
    Ok(out)
}

/// Kernel size, stride and zero padding of a sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        Self {
            kh,
            kw,
            stride,
            pad,
        }
    }

    /// Output spatial size; the window must tile the padded input exactly.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kh == 0 || self.kw == 0 || self.stride == 0 {
            return Err(Error::config(format!("degenerate window {self:?}")));
        }
        let span = |len: usize, k: usize| -> Result<usize> {
            let padded = len + 2 * self.pad;
            if k > padded || (padded - k) % self.stride != 0 {
                return Err(Error::config(format!(
                    "window {k} with stride {} and pad {} does not tile input of size {len}",
                    self.stride, self.pad
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((span(h, self.kh)?, span(w, self.kw)?))
    }

    pub(crate) fn patch_len(&self, channels: usize) -> usize {
        channels * self.kh * self.kw
    }
}

/// Lowers one `C x H x W` sample to a `(Ho*Wo) x (C*kh*kw)` patch matrix.
pub(crate) fn im2col_sample<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    geom: &ConvGeometry,
    (ho, wo): (usize, usize),
    out: &mut [T],
) {
    let patch = geom.patch_len(c);
    debug_assert_eq!(out.len(), ho * wo * patch);
    let pad = geom.pad as isize;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut out[(oy * wo + ox) * patch..(oy * wo + ox + 1) * patch];
            let y0 = (oy * geom.stride) as isize - pad;
            let x0 = (ox * geom.stride) as isize - pad;
            let mut col = 0;
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                for ky in 0..geom.kh {
                    let iy = y0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        row[col..col + geom.kw].fill(T::zero());
                        col += geom.kw;
                        continue;
                    }
                    let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for kx in 0..geom.kw {
                        let ix = x0 + kx as isize;
                        row[col] = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            line[ix as usize]
                        };
                        col += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_sample`]: scatters patch gradients back, accumulating into `dx`.
pub(crate) fn col2im_sample<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    geom: &ConvGeometry,
    (ho, wo): (usize, usize),
    dx: &mut [T],
) {
    let patch = geom.patch_len(c);
    let pad = geom.pad as isize;
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * patch..(oy * wo + ox + 1) * patch];
            let y0 = (oy * geom.stride) as isize - pad;
            let x0 = (ox * geom.stride) as isize - pad;
            let mut col = 0;
            for ch in 0..c {
                for ky in 0..geom.kh {
                    let iy = y0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        col += geom.kw;
                        continue;
                    }
                    let base = ch * h * w + iy as usize * w;
                    for kx in 0..geom.kw {
                        let ix = x0 + kx as isize;
                        if ix >= 0 && ix < w as isize {
                            let v = &mut dx[base + ix as usize];
                            *v = *v + row[col];
                        }
                        col += 1;
                    }
                }
            }
        }
    }
}

/// Output columns `ox` whose input column `ox * stride + off` lies in `0..w`.
fn valid_columns(off: isize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = if (w as isize) <= off {
        0
    } else {
        (w as isize - off + s - 1) / s
    };
    let lo = (lo as usize).min(wo);
    (lo, (hi as usize).clamp(lo, wo))
}

/// Channel-major patch matrix `(C*kh*kw) x (Ho*Wo)`, the transpose of
/// [`im2col_sample`]'s output, with row stride `ld`. Rows are filled with
/// contiguous copies.
pub(crate) fn im2col_cm_sample<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    geom: &ConvGeometry,
    (ho, wo): (usize, usize),
    out: &mut [T],
    ld: usize,
) {
    let spatial = ho * wo;
    debug_assert!(out.len() >= (geom.patch_len(c) - 1) * ld + spatial);
    let pad = geom.pad as isize;
    let mut r = 0;
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..geom.kh {
            for kx in 0..geom.kw {
                let row = &mut out[r * ld..r * ld + spatial];
                r += 1;
                let off = kx as isize - pad;
                let (lo, hi) = valid_columns(off, geom.stride, w, wo);
                for (oy, dst) in row.chunks_mut(wo).enumerate() {
                    let iy = (oy * geom.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    if geom.stride == 1 {
                        let start = (lo as isize + off) as usize;
                        dst[lo..hi].copy_from_slice(&line[start..start + hi - lo]);
                    } else {
                        for (ox, v) in dst[lo..hi].iter_mut().enumerate() {
                            *v = line[((ox + lo) * geom.stride) + kx - geom.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_cm_sample`], accumulating into `dx`.
pub(crate) fn col2im_cm_sample<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    geom: &ConvGeometry,
    (ho, wo): (usize, usize),
    dx: &mut [T],
    ld: usize,
) {
    let spatial = ho * wo;
    let pad = geom.pad as isize;
    let mut r = 0;
    for ch in 0..c {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..geom.kh {
            for kx in 0..geom.kw {
                let row = &cols[r * ld..r * ld + spatial];
                r += 1;
                let off = kx as isize - pad;
                let (lo, hi) = valid_columns(off, geom.stride, w, wo);
                for (oy, src) in row.chunks(wo).enumerate() {
                    let iy = (oy * geom.stride + ky) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in src.iter().enumerate().take(hi).skip(lo) {
                        let ix = (ox * geom.stride) as isize + off;
                        line[ix as usize] = line[ix as usize] + g;
                    }
                }
            }
        }
    }
}

fn nchw(x: &Tensor<impl Scalar>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Dimension {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![4],
        }),
    }
}

/// `N x C x H x W` to `(N*Ho*Wo) x (C*kh*kw)`, one receptive field per row.
pub fn im2col<T: Scalar>(x: &Tensor<T>, geom: ConvGeometry) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(x, "im2col")?;
    let (ho, wo) = geom.output_hw(h, w)?;
    let patch = geom.patch_len(c);
    let per_sample = ho * wo * patch;
    let mut out = Tensor::zeros([n * ho * wo, patch]);
    for (i, chunk) in out.data_mut().chunks_mut(per_sample.max(1)).enumerate().take(n) {
        im2col_sample(x.row(i), (c, h, w), &geom, (ho, wo), chunk);
    }
    Ok(out)
}

/// Adjoint of [`im2col`] for an input of shape `input_shape`.
pub fn col2im<T: Scalar>(
    cols: &Tensor<T>,
    input_shape: [usize; 4],
    geom: ConvGeometry,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    let (ho, wo) = geom.output_hw(h, w)?;
    let patch = geom.patch_len(c);
    if cols.shape() != [n * ho * wo, patch] {
        return Err(Error::Dimension {
            op: "col2im",
            lhs: cols.shape().to_vec(),
            rhs: vec![n * ho * wo, patch],
        });
    }
    let mut dx = Tensor::zeros(input_shape);
    let per_sample = ho * wo * patch;
    for i in 0..n {
        col2im_sample(
            &cols.data()[i * per_sample..(i + 1) * per_sample],
            (c, h, w),
            &geom,
            (ho, wo),
            dx.row_mut(i),
        );
    }
    Ok(dx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
    /// Index of the maximum; the lowest index wins exact ties.
    Argmax,
}

/// Reduces along `axis`, removing it from the shape.
pub fn reduce<T: Scalar>(x: &Tensor<T>, axis: usize, kind: ReduceKind) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::Domain(format!(
            "axis {axis} out of range for rank {}",
            x.rank()
        )));
    }
    let len = x.dim(axis);
    if len == 0 {
        return Err(Error::Domain(format!("reduction over empty axis {axis}")));
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    let data = x.data();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| data[(o * len + j) * inner + i];
            let value = match kind {
                ReduceKind::Sum => (0..len).map(at).sum(),
                ReduceKind::Mean => (0..len).map(at).sum::<T>() / T::from_usize_lossy(len),
                ReduceKind::Max => (1..len).map(at).fold(at(0), |m, v| if v > m { v } else { m }),
                ReduceKind::Argmax => {
                    let mut best = 0;
                    for j in 1..len {
                        if at(j) > at(best) {
                            best = j;
                        }
                    }
                    T::from_usize_lossy(best)
                }
            };
            out.push(value);
        }
    }
    Tensor::new(shape, out)
}

/// Lowest index of the maximum element.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t64(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_evaluated() {
        let a = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t64(&[2, 1], &[5.0, 6.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::<f32>::zeros([2, 3]);
        let b = Tensor::<f32>::from_fn([3, 4], |i| i as f32 - 5.5);
        let c = matmul(&z, &b).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]);
        let b = Tensor::<f32>::zeros([2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (m, k, l, n) = (
                rng.random_range(1..6),
                rng.random_range(1..6),
                rng.random_range(1..6),
                rng.random_range(1..6),
            );
            let mut rand_t = |r, c| Tensor::<f64>::from_fn([r, c], |_| rng.random_range(-1.0..1.0));
            let (a, b, c) = (rand_t(m, k), rand_t(k, l), rand_t(l, n));
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn im2col_single_patch_is_flattened_input() {
        let x = t64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let cols = im2col(&x, ConvGeometry::new(2, 2, 1, 0)).unwrap();
        assert_eq!(cols.shape(), &[1, 4]);
        assert_eq!(cols.data(), x.data());
    }

    #[test]
    fn im2col_ones_three_by_three() {
        let x = Tensor::<f64>::full([1, 1, 3, 3], 1.0);
        let cols = im2col(&x, ConvGeometry::new(2, 2, 1, 0)).unwrap();
        assert_eq!(cols.shape(), &[4, 4]);
        assert!(cols.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn im2col_padding_zeroes_border() {
        let x = Tensor::<f64>::full([1, 1, 2, 2], 7.0);
        let cols = im2col(&x, ConvGeometry::new(1, 1, 1, 1)).unwrap();
        assert_eq!(cols.shape(), &[16, 1]);
        // 4x4 padded grid: only the centre 2x2 carries input values
        let nonzero: Vec<usize> = (0..16).filter(|&i| cols.data()[i] != 0.0).collect();
        assert_eq!(nonzero, vec![5, 6, 9, 10]);
    }

    #[test]
    fn im2col_rejects_non_integral_output() {
        let x = Tensor::<f64>::zeros([1, 1, 4, 4]);
        assert!(matches!(
            im2col(&x, ConvGeometry::new(3, 3, 2, 0)),
            Err(Error::Config(_))
        ));
    }

    /// Direct sliding-window convolution, used as the brute-force reference.
    fn direct_conv(x: &[f64], h: usize, w: usize, k: &[f64], kh: usize, kw: usize) -> Vec<f64> {
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        let mut out = vec![0.0; ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..kh {
                    for kx in 0..kw {
                        out[oy * wo + ox] += x[(oy + ky) * w + ox + kx] * k[ky * kw + kx];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_matmul_equals_direct_convolution_exhaustive_binary_inputs() {
        // every 0/1 pattern of a 1x1x4x4 input against two fixed 3x3 kernels
        let kernels = [
            [1.0, -2.0, 0.5, 3.0, 0.0, -1.0, 2.0, 1.5, -0.25],
            [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        ];
        let geom = ConvGeometry::new(3, 3, 1, 0);
        for pattern in 0u32..(1 << 16) {
            let xs: Vec<f64> = (0..16).map(|b| ((pattern >> b) & 1) as f64).collect();
            let x = t64(&[1, 1, 4, 4], &xs);
            let cols = im2col(&x, geom).unwrap();
            for k in &kernels {
                let kt = t64(&[9, 1], k);
                let via = matmul(&cols, &kt).unwrap();
                assert_eq!(via.data(), direct_conv(&xs, 4, 4, k, 3, 3).as_slice());
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let geom = ConvGeometry::new(3, 3, 1, 1);
        let x = Tensor::<f64>::from_fn([2, 3, 5, 5], |_| rng.random_range(-1.0..1.0));
        let cols = im2col(&x, geom).unwrap();
        let g = Tensor::<f64>::from_fn(cols.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
        let back = col2im(&g, [2, 3, 5, 5], geom).unwrap();
        let lhs: f64 = cols.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn channel_major_layout_is_transposed_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (k, stride, pad, h, w) in [(3, 1, 1, 5, 6), (3, 2, 1, 7, 5), (2, 2, 0, 6, 4), (1, 1, 0, 3, 3), (3, 1, 2, 4, 4), (3, 3, 2, 5, 8)] {
            let geom = ConvGeometry::new(k, k, stride, pad);
            let Ok((ho, wo)) = geom.output_hw(h, w) else { continue };
            let c = 2;
            let x: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = geom.patch_len(c);
            let mut rows = vec![0.0; ho * wo * p];
            im2col_sample(&x, (c, h, w), &geom, (ho, wo), &mut rows);
            let mut cm = vec![f64::NAN; ho * wo * p];
            im2col_cm_sample(&x, (c, h, w), &geom, (ho, wo), &mut cm, ho * wo);
            for s in 0..ho * wo {
                for j in 0..p {
                    assert_eq!(rows[s * p + j], cm[j * ho * wo + s], "k={k} stride={stride} pad={pad}");
                }
            }
            let g: Vec<f64> = (0..ho * wo * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut g_t = vec![0.0; g.len()];
            for s in 0..ho * wo {
                for j in 0..p {
                    g_t[j * ho * wo + s] = g[s * p + j];
                }
            }
            let mut a = vec![0.0; x.len()];
            let mut b = vec![0.0; x.len()];
            col2im_sample(&g, (c, h, w), &geom, (ho, wo), &mut a);
            col2im_cm_sample(&g_t, (c, h, w), &geom, (ho, wo), &mut b, ho * wo);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reduce_examples() {
        let x = t64(&[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(reduce(&x, 0, ReduceKind::Mean).unwrap().data(), &[2.5]);
        let y = t64(&[3], &[0.0, 5.0, 5.0]);
        assert_eq!(reduce(&y, 0, ReduceKind::Argmax).unwrap().data(), &[1.0]);
        let z = Tensor::<f64>::zeros([3]);
        assert_eq!(reduce(&z, 0, ReduceKind::Sum).unwrap().data(), &[0.0]);
    }

    #[test]
    fn reduce_along_inner_axis() {
        let x = t64(&[2, 3], &[1.0, 9.0, 3.0, 4.0, 2.0, 8.0]);
        assert_eq!(reduce(&x, 1, ReduceKind::Max).unwrap().data(), &[9.0, 8.0]);
        assert_eq!(reduce(&x, 0, ReduceKind::Sum).unwrap().data(), &[5.0, 11.0, 11.0]);
        assert_eq!(reduce(&x, 1, ReduceKind::Argmax).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn reduce_errors() {
        let x = Tensor::<f64>::zeros([2, 0]);
        assert!(matches!(reduce(&x, 1, ReduceKind::Sum), Err(Error::Domain(_))));
        assert!(matches!(reduce(&x, 2, ReduceKind::Sum), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn argmax_is_deterministic_and_lowest(values in proptest::collection::vec(0u8..4, 1..20)) {
            let first = argmax(&values);
            prop_assert_eq!(first, argmax(&values));
            let max = *values.iter().max().unwrap();
            prop_assert_eq!(first, values.iter().position(|&v| v == max).unwrap());
        }
    }
}
