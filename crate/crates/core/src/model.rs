//! The desk-scale classifier: a small VGG-style backbone, global average
//! pooling, and an FFC head (`depth = 0` is the plain linear head).

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffc::{FfcHead, FfcOutputs, DEFAULT_LN_EPS};
use crate::nn::{Conv2d, GlobalAvgPool, Layer, MaxPool2d, Param, Relu, SeBlock, Sequential};
use crate::tensor::{Scalar, Tensor};

/// Architecture and input normalization of a [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub in_channels: usize,
    /// Output channels of each stage (two 3x3 convs + ReLU, then 2x2 max-pool).
    pub widths: Vec<usize>,
    /// 1-based stages followed by an SE block.
    pub se_stages: Vec<usize>,
    pub se_reduction: usize,
    /// Number of filtering stages; 0 is a plain linear classifier.
    pub depth: usize,
    pub classes: usize,
    pub ln_eps: f64,
    pub norm_mean: Vec<f32>,
    pub norm_std: Vec<f32>,
}

impl ModelSpec {
    /// The 32/64/128-channel backbone.
    pub fn small_conv_net(in_channels: usize, classes: usize, depth: usize) -> Self {
        Self {
            in_channels,
            widths: vec![32, 64, 128],
            se_stages: Vec::new(),
            se_reduction: 16,
            depth,
            classes,
            ln_eps: DEFAULT_LN_EPS,
            norm_mean: vec![0.0; in_channels],
            norm_std: vec![1.0; in_channels],
        }
    }

    /// Width of the pooled feature fed to the head.
    pub fn feature_channels(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.in_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.in_channels == 0 {
            return Err(Error::config("classes and input channels must be positive"));
        }
        if self.widths.contains(&0) {
            return Err(Error::config("stage widths must be positive"));
        }
        if let Some(&s) = self.se_stages.iter().find(|&&s| s == 0 || s > self.widths.len()) {
            return Err(Error::config(format!(
                "SE stage {s} outside 1..={}",
                self.widths.len()
            )));
        }
        if self.norm_mean.len() != self.in_channels || self.norm_std.len() != self.in_channels {
            return Err(Error::config("normalization must have one entry per input channel"));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::config("ln_eps must be positive"));
        }
        Ok(())
    }

    /// Flat `key=value` form used in checkpoints and resolved configs.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        fn list<V: ToString>(v: &[V]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        }
        BTreeMap::from([
            ("model.in_channels".into(), self.in_channels.to_string()),
            ("model.widths".into(), list(&self.widths)),
            ("model.se_stages".into(), list(&self.se_stages)),
            ("model.se_reduction".into(), self.se_reduction.to_string()),
            ("model.depth".into(), self.depth.to_string()),
            ("model.classes".into(), self.classes.to_string()),
            ("model.ln_eps".into(), self.ln_eps.to_string()),
            ("model.norm_mean".into(), list(&self.norm_mean)),
            ("model.norm_std".into(), list(&self.norm_std)),
        ])
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
            kv.get(key)
                .map(String::as_str)
                .ok_or_else(|| Error::format(format!("missing `{key}` in model config")))
        }
        fn num<V: std::str::FromStr>(key: &str, s: &str) -> Result<V> {
            s.trim()
                .parse()
                .map_err(|_| Error::format(format!("bad value `{s}` for `{key}`")))
        }
        fn list<V: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Vec<V>> {
            let s = get(kv, key)?;
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',').map(|p| num(key, p)).collect()
        }
        let spec = Self {
            in_channels: num("model.in_channels", get(kv, "model.in_channels")?)?,
            widths: list(kv, "model.widths")?,
            se_stages: list(kv, "model.se_stages")?,
            se_reduction: num("model.se_reduction", get(kv, "model.se_reduction")?)?,
            depth: num("model.depth", get(kv, "model.depth")?)?,
            classes: num("model.classes", get(kv, "model.classes")?)?,
            ln_eps: num("model.ln_eps", get(kv, "model.ln_eps")?)?,
            norm_mean: list(kv, "model.norm_mean")?,
            norm_std: list(kv, "model.norm_std")?,
        };
        spec.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(spec)
    }
}

/// Backbone + FFC head.
pub struct Model<T: Scalar = f32> {
    pub spec: ModelSpec,
    pub backbone: Sequential<T>,
    pub head: FfcHead<T>,
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model; all randomness comes from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut backbone = Sequential::new();
        let mut channels = spec.in_channels;
        for (s, &width) in spec.widths.iter().enumerate() {
            let stage = s + 1;
            backbone.push(Conv2d::new(
                &format!("stage{stage}.conv1"),
                channels,
                width,
                3,
                1,
                1,
                &mut rng,
            ));
            backbone.push(Relu::new());
            backbone.push(Conv2d::new(
                &format!("stage{stage}.conv2"),
                width,
                width,
                3,
                1,
                1,
                &mut rng,
            ));
            backbone.push(Relu::new());
            backbone.push(MaxPool2d::new(2, 2));
            if spec.se_stages.contains(&stage) {
                backbone.push(SeBlock::new(
                    &format!("stage{stage}.se"),
                    width,
                    spec.se_reduction,
                    &mut rng,
                )?);
            }
            channels = width;
        }
        backbone.push(GlobalAvgPool::new());
        let head = FfcHead::new(spec.feature_channels(), spec.classes, spec.depth, spec.ln_eps, &mut rng);
        Ok(Self {
            spec,
            backbone,
            head,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<FfcOutputs<T>> {
        let feature = self.backbone.forward(x)?;
        self.head.forward(&feature)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<FfcOutputs<T>> {
        let feature = self.backbone.infer(x)?;
        self.head.infer(&feature)
    }

    /// Backpropagates per-head logit gradients; returns the input gradient.
    pub fn backward(&mut self, head_grads: &[Tensor<T>]) -> Result<Tensor<T>> {
        let d_feature = self.head.backward(head_grads)?;
        self.backbone.backward(&d_feature)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.backbone.params();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.backbone.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn kink_distance(&self) -> Option<f64> {
        [self.backbone.kink_distance(), self.head.kink_distance()]
            .into_iter()
            .flatten()
            .reduce(f64::min)
    }

    /// Copies parameter values from `values`, matched by position.
    pub fn load_values(&mut self, values: &[Tensor<T>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::format(format!(
                "expected {} tensors, found {}",
                params.len(),
                values.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Dimension {
                    op: "load parameters",
                    lhs: p.value.shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            p.value = v.clone();
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params().iter().map(|p| p.value.clone()).collect()
    }

    /// Copies every named tensor that matches a parameter in name and shape;
    /// returns the names that were copied. Used to start from a pretrained
    /// backbone with a different head.
    pub fn load_matching(&mut self, tensors: &[(String, Tensor<T>)]) -> Vec<String> {
        let mut copied = Vec::new();
        for p in self.params_mut() {
            if let Some((_, t)) = tensors
                .iter()
                .find(|(name, t)| *name == p.name && t.shape() == p.value.shape())
            {
                p.value = t.clone();
                copied.push(p.name.clone());
            }
        }
        copied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(depth: usize) -> ModelSpec {
        ModelSpec {
            widths: vec![4, 8],
            se_stages: vec![2],
            se_reduction: 4,
            ..ModelSpec::small_conv_net(1, 3, depth)
        }
    }

    #[test]
    fn small_conv_net_shapes() {
        let model = Model::<f32>::new(ModelSpec::small_conv_net(1, 10, 3), 0).unwrap();
        let out = model.infer(&Tensor::zeros([2, 1, 28, 28])).unwrap();
        assert_eq!(out.logits.len(), 7);
        assert_eq!(out.logits[0].shape(), &[2, 10]);
        assert_eq!(out.features[0].shape(), &[2, 128]);
    }

    #[test]
    fn ffc_adds_exactly_two_d_c_parameters() {
        let ffc = Model::<f32>::new(ModelSpec::small_conv_net(1, 10, 3), 0).unwrap();
        let plain = Model::<f32>::new(ModelSpec::small_conv_net(1, 10, 0), 0).unwrap();
        assert_eq!(ffc.param_count() - plain.param_count(), 2 * 3 * 128);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Model::<f32>::new(tiny(2), 9).unwrap();
        let b = Model::<f32>::new(tiny(2), 9).unwrap();
        assert_eq!(a.values(), b.values());
        let c = Model::<f32>::new(tiny(2), 10).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn spec_kv_round_trip() {
        let mut spec = tiny(3);
        spec.norm_mean = vec![0.1307];
        spec.norm_std = vec![0.3081];
        assert_eq!(ModelSpec::from_kv(&spec.to_kv()).unwrap(), spec);
    }

    #[test]
    fn load_matching_copies_backbone_into_a_new_head() {
        let plain = Model::<f32>::new(tiny(0), 1).unwrap();
        let mut ffc = Model::<f32>::new(tiny(3), 2).unwrap();
        let named: Vec<(String, Tensor<f32>)> = plain
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        let copied = ffc.load_matching(&named);
        assert_eq!(copied.len(), named.len());
        assert_eq!(ffc.head.classifier.weight.value, plain.head.classifier.weight.value);
        assert_eq!(ffc.head.stages.len(), 3);
    }

    #[test]
    fn rejects_bad_se_stage() {
        let spec = ModelSpec {
            se_stages: vec![4],
            ..tiny(1)
        };
        assert!(matches!(Model::<f32>::new(spec, 0), Err(Error::Config(_))));
    }
}
