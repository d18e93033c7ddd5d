use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Layer, Linear, Param};
use crate::tensor::{Scalar, Tensor};

/// Default LayerNorm epsilon, added to the variance inside the square root.
pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// Learnable affine parameters of one LayerNorm + ReLU filtering stage.
#[derive(Debug, Clone)]
pub struct FilterStage<T: Scalar = f32> {
    pub gain: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> FilterStage<T> {
    /// Identity affine: gain 1, bias 0.
    pub fn identity(name: &str, channels: usize) -> Self {
        Self {
            gain: Param::new(format!("{name}.gain"), Tensor::full([channels], T::one())),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros([channels])),
        }
    }
}

/// Everything the backward pass needs from one filtering stage.
struct StageCache<T: Scalar> {
    normalized: Tensor<T>,
    /// Affine output before the ReLU.
    pre: Tensor<T>,
    inv_sigma: Vec<T>,
}

fn filter_forward<T: Scalar>(
    x: &Tensor<T>,
    gain: &[T],
    bias: &[T],
    eps: f64,
) -> (Tensor<T>, StageCache<T>) {
    let c = gain.len();
    let n = x.dim(0);
    let eps = T::from_f64_lossy(eps);
    let inv_c = T::one() / T::from_usize_lossy(c);
    let mut normalized = Tensor::zeros([n, c]);
    let mut pre = Tensor::zeros([n, c]);
    let mut out = Tensor::zeros([n, c]);
    let mut inv_sigma = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() * inv_c;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
        let inv = T::one() / (var + eps).sqrt();
        inv_sigma.push(inv);
        let z = normalized.row_mut(i);
        for (zj, &v) in z.iter_mut().zip(row) {
            *zj = (v - mean) * inv;
        }
        let a = pre.row_mut(i);
        let y = out.row_mut(i);
        for j in 0..c {
            a[j] = gain[j] * normalized.row(i)[j] + bias[j];
            y[j] = if a[j] > T::zero() { a[j] } else { T::zero() };
        }
    }
    (
        out,
        StageCache {
            normalized,
            pre,
            inv_sigma,
        },
    )
}

/// One filtering step: per-sample LayerNorm with affine `gain`/`bias`, then ReLU.
///
/// `mu = mean(x)`, `sigma = sqrt(mean((x - mu)^2) + eps)`,
/// `y = relu(gain * (x - mu) / sigma + bias)`.
pub fn filter_step<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = gain.len();
    if x.rank() != 2 || x.dim(1) != c || bias.len() != c {
        return Err(Error::Dimension {
            op: "filter_step",
            lhs: x.shape().to_vec(),
            rhs: vec![gain.len(), bias.len()],
        });
    }
    Ok(filter_forward(x, gain.data(), bias.data(), eps).0)
}

/// Number of strictly nonzero units in each row.
pub fn active_units<T: Scalar>(features: &Tensor<T>) -> Vec<usize> {
    (0..features.dim(0))
        .map(|i| features.row(i).iter().filter(|&&v| v != T::zero()).count())
        .collect()
}

/// All outputs of one head evaluation.
#[derive(Debug, Clone)]
pub struct FfcOutputs<T: Scalar = f32> {
    /// `2d + 1` logit matrices, `N x K`, in Out1..Out(2d+1) order.
    pub logits: Vec<Tensor<T>>,
    /// Filtered features `F_0..F_d`; `F_0` is the raw input.
    pub features: Vec<Tensor<T>>,
    /// `active_counts[k][i]`: nonzero units of `F_k` for sample `i`.
    pub active_counts: Vec<Vec<usize>>,
}

impl<T: Scalar> FfcOutputs<T> {
    pub fn head_count(&self) -> usize {
        self.logits.len()
    }

    pub fn samples(&self) -> usize {
        self.logits.first().map_or(0, |l| l.dim(0))
    }
}

/// Feature index (or adjacent pair) that head `j` (0-based) classifies.
///
/// Even heads see `F_{j/2}`; odd heads see the mean of the two features
/// around them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadInput {
    Filtered(usize),
    Averaged(usize, usize),
}

impl HeadInput {
    pub fn of(head: usize) -> Self {
        if head % 2 == 0 {
            HeadInput::Filtered(head / 2)
        } else {
            HeadInput::Averaged(head / 2, head / 2 + 1)
        }
    }
}

struct HeadCache<T: Scalar> {
    samples: usize,
    stages: Vec<StageCache<T>>,
    /// Classifier inputs of all heads, stacked head-major: `(2d+1)N x C`.
    stacked: Tensor<T>,
}

/// Sequential feature filtering classifier head.
///
/// `d` LayerNorm + ReLU stages produce `F_1..F_d` from the input feature
/// `F_0`; one shared linear classifier is applied to every `F_k` and to every
/// adjacent mean `(F_{k-1} + F_k) / 2`, giving `2d + 1` logit vectors.
pub struct FfcHead<T: Scalar = f32> {
    pub stages: Vec<FilterStage<T>>,
    pub classifier: Linear<T>,
    pub eps: f64,
    cache: Option<HeadCache<T>>,
}

impl<T: Scalar> FfcHead<T> {
    pub fn new<R: Rng + ?Sized>(
        channels: usize,
        classes: usize,
        depth: usize,
        eps: f64,
        rng: &mut R,
    ) -> Self {
        let classifier = Linear::new("head.classifier", channels, classes, rng);
        Self::from_parts(
            (1..=depth)
                .map(|k| FilterStage::identity(&format!("head.ln{k}"), channels))
                .collect(),
            classifier,
            eps,
        )
    }

    pub fn from_parts(stages: Vec<FilterStage<T>>, classifier: Linear<T>, eps: f64) -> Self {
        for s in &stages {
            assert_eq!(s.gain.len(), classifier.inputs());
            assert_eq!(s.bias.len(), classifier.inputs());
        }
        Self {
            stages,
            classifier,
            eps,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.classifier.inputs()
    }

    pub fn classes(&self) -> usize {
        self.classifier.outputs()
    }

    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn head_count(&self) -> usize {
        2 * self.depth() + 1
    }

    fn check_input(&self, feature: &Tensor<T>) -> Result<()> {
        if feature.rank() != 2 || feature.dim(1) != self.channels() {
            return Err(Error::Dimension {
                op: "ffc_forward",
                lhs: feature.shape().to_vec(),
                rhs: vec![feature.dim(0), self.channels()],
            });
        }
        Ok(())
    }

    fn run(&self, feature: &Tensor<T>) -> Result<(FfcOutputs<T>, HeadCache<T>)> {
        self.check_input(feature)?;
        let (n, c) = (feature.dim(0), self.channels());
        let mut features = vec![feature.clone()];
        let mut stages = Vec::with_capacity(self.depth());
        for stage in &self.stages {
            let prev = features.last().expect("F_0 present");
            let (next, cache) =
                filter_forward(prev, stage.gain.value.data(), stage.bias.value.data(), self.eps);
            features.push(next);
            stages.push(cache);
        }

        let heads = self.head_count();
        let half = T::from_f64_lossy(0.5);
        let mut stacked = Tensor::zeros([heads * n, c]);
        for (j, block) in stacked.data_mut().chunks_mut(n * c).enumerate() {
            match HeadInput::of(j) {
                HeadInput::Filtered(k) => block.copy_from_slice(features[k].data()),
                HeadInput::Averaged(a, b) => {
                    for ((o, &x), &y) in block
                        .iter_mut()
                        .zip(features[a].data())
                        .zip(features[b].data())
                    {
                        *o = (x + y) * half;
                    }
                }
            }
        }
        let all_logits = self.classifier.apply(&stacked);
        let k = self.classes();
        let logits = all_logits
            .data()
            .chunks(n * k)
            .map(|block| Tensor::new([n, k], block.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let active_counts = features.iter().map(active_units).collect();
        Ok((
            FfcOutputs {
                logits,
                features,
                active_counts,
            },
            HeadCache {
                samples: n,
                stages,
                stacked,
            },
        ))
    }

    /// Forward pass that caches state for [`FfcHead::backward`].
    pub fn forward(&mut self, feature: &Tensor<T>) -> Result<FfcOutputs<T>> {
        let (out, cache) = self.run(feature)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Forward pass without caching.
    pub fn infer(&self, feature: &Tensor<T>) -> Result<FfcOutputs<T>> {
        Ok(self.run(feature)?.0)
    }

    /// Backpropagates one logit gradient per head; accumulates into the
    /// stage and classifier parameters and returns the gradient of the
    /// input feature.
    pub fn backward(&mut self, head_grads: &[Tensor<T>]) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::usage("ffc head: backward called without a cached forward pass"))?;
        let (n, c, k) = (cache.samples, self.channels(), self.classes());
        let heads = self.head_count();
        if head_grads.len() != heads {
            return Err(Error::Dimension {
                op: "ffc_backward",
                lhs: vec![head_grads.len()],
                rhs: vec![heads],
            });
        }
        let mut stacked_grad = Tensor::zeros([heads * n, k]);
        for (block, g) in stacked_grad.data_mut().chunks_mut(n * k).zip(head_grads) {
            if g.shape() != [n, k] {
                return Err(Error::Dimension {
                    op: "ffc_backward",
                    lhs: g.shape().to_vec(),
                    rhs: vec![n, k],
                });
            }
            block.copy_from_slice(g.data());
        }
        let d_inputs = self.classifier.accumulate(&cache.stacked, &stacked_grad);

        let half = T::from_f64_lossy(0.5);
        let mut d_features: Vec<Tensor<T>> = (0..=self.depth()).map(|_| Tensor::zeros([n, c])).collect();
        for (j, block) in d_inputs.data().chunks(n * c).enumerate() {
            match HeadInput::of(j) {
                HeadInput::Filtered(f) => {
                    for (d, &g) in d_features[f].data_mut().iter_mut().zip(block) {
                        *d = *d + g;
                    }
                }
                HeadInput::Averaged(a, b) => {
                    for f in [a, b] {
                        for (d, &g) in d_features[f].data_mut().iter_mut().zip(block) {
                            *d = *d + g * half;
                        }
                    }
                }
            }
        }

        let inv_c = T::one() / T::from_usize_lossy(c);
        for s in (0..self.depth()).rev() {
            let stage_cache = &cache.stages[s];
            let dy = std::mem::replace(&mut d_features[s + 1], Tensor::zeros([0]));
            let stage = &mut self.stages[s];
            let gain = stage.gain.value.data().to_vec();
            let dprev = &mut d_features[s];
            let mut dz = vec![T::zero(); c];
            for i in 0..n {
                let z = stage_cache.normalized.row(i);
                let a = stage_cache.pre.row(i);
                let g = dy.row(i);
                for j in 0..c {
                    let da = if a[j] > T::zero() { g[j] } else { T::zero() };
                    let dg = &mut stage.gain.grad.data_mut()[j];
                    *dg = *dg + da * z[j];
                    let db = &mut stage.bias.grad.data_mut()[j];
                    *db = *db + da;
                    dz[j] = da * gain[j];
                }
                let mean_dz = dz.iter().copied().sum::<T>() * inv_c;
                let mean_dz_z = dz.iter().zip(z).map(|(&a, &b)| a * b).sum::<T>() * inv_c;
                let inv = stage_cache.inv_sigma[i];
                for (j, d) in dprev.row_mut(i).iter_mut().enumerate() {
                    *d = *d + inv * (dz[j] - mean_dz - z[j] * mean_dz_z);
                }
            }
        }
        Ok(d_features.swap_remove(0))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p: Vec<&Param<T>> = self
            .stages
            .iter()
            .flat_map(|s| [&s.gain, &s.bias])
            .collect();
        p.extend(self.classifier.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = self
            .stages
            .iter_mut()
            .flat_map(|s| [&mut s.gain, &mut s.bias])
            .collect();
        p.extend(self.classifier.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Smallest |pre-activation| seen by any stage ReLU in the cached pass.
    pub fn kink_distance(&self) -> Option<f64> {
        self.cache.as_ref().and_then(|c| {
            c.stages
                .iter()
                .flat_map(|s| s.pre.data().iter().map(|v| v.to_f64_lossy().abs()))
                .reduce(f64::min)
        })
    }
}
