//! Finite-difference gradient checks in `f64`.
//!
//! Each component is probed with the scalar objective `sum(r * f(x))` for a
//! random `r` of the output's shape, so `r` is exactly the output gradient fed
//! to the backward pass. Inputs and a random subset of every parameter tensor
//! are perturbed by `+-step` and compared against the analytic gradient.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ffc::{train_loss, FfcHead, FfcOutputs};
use crate::model::{Model, ModelSpec};
use crate::nn::{
    Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2d, Param, Relu, SeBlock, Sequential, Targets,
};
use crate::tensor::Tensor;

/// Gradients below this magnitude are compared in absolute rather than
/// relative terms.
pub const GRAD_FLOOR: f64 = 1e-3;

/// Forward passes whose kink distance is below this are resampled.
pub const KINK_MARGIN: f64 = 1e-3;

const MAX_ATTEMPTS: usize = 1000;

/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Linear,
    Conv2d,
    Relu,
    MaxPool,
    GlobalAvgPool,
    SeBlock,
    SoftmaxCrossEntropy,
    FfcHead,
    FfcLoss,
    TwoLayer,
    EndToEnd,
}

impl Component {
    pub const ALL: [Component; 11] = [
        Component::Linear,
        Component::Conv2d,
        Component::Relu,
        Component::MaxPool,
        Component::GlobalAvgPool,
        Component::SeBlock,
        Component::SoftmaxCrossEntropy,
        Component::FfcHead,
        Component::FfcLoss,
        Component::TwoLayer,
        Component::EndToEnd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Component::Linear => "linear",
            Component::Conv2d => "conv2d",
            Component::Relu => "relu",
            Component::MaxPool => "max_pool",
            Component::GlobalAvgPool => "global_avg_pool",
            Component::SeBlock => "se_block",
            Component::SoftmaxCrossEntropy => "softmax_cross_entropy",
            Component::FfcHead => "ffc_head",
            Component::FfcLoss => "ffc_loss",
            Component::TwoLayer => "two_layer",
            Component::EndToEnd => "end_to_end",
        }
    }

    /// Largest acceptable relative error.
    pub fn threshold(&self) -> f64 {
        match self {
            Component::Linear => 1e-7,
            Component::EndToEnd => 1e-5,
            _ => 1e-6,
        }
    }
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Component::ALL.iter().map(|c| c.name()).collect();
                Error::config(format!("unknown component `{s}` ({})", names.join(", ")))
            })
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub step: f64,
    pub seed: u64,
    /// Coordinates probed per tensor per trial; smaller tensors are probed fully.
    pub coords_per_tensor: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            step: 1e-5,
            seed: 0,
            coords_per_tensor: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub component: Component,
    pub trials: usize,
    pub max_rel_error: f64,
    /// Tensor and flat index where the worst error occurred.
    pub worst: String,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.component.threshold()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(GradCheckEntry::passed)
    }

    pub fn offenders(&self) -> Vec<&GradCheckEntry> {
        self.entries.iter().filter(|e| !e.passed()).collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>6} {:>13} {:>10}  {:<6} worst",
            "component", "trials", "max rel err", "threshold", "status"
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<22} {:>6} {:>13.3e} {:>10.0e}  {:<6} {}",
                e.component.name(),
                e.trials,
                e.max_rel_error,
                e.component.threshold(),
                if e.passed() { "ok" } else { "FAIL" },
                e.worst
            )?;
        }
        Ok(())
    }
}

/// Anything with a cached forward, a backward, and parameters.
trait Checkable {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
    fn infer(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
    fn backward(&mut self, grads: &[Tensor<f64>]) -> Result<Tensor<f64>>;
    fn params_mut(&mut self) -> Vec<&mut Param<f64>>;
    fn kink_distance(&self) -> Option<f64>;
}

struct AsCheck<L>(L);

impl<L: Layer<f64>> Checkable for AsCheck<L> {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![self.0.forward(x)?])
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![self.0.infer(x)?])
    }

    fn backward(&mut self, grads: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        self.0.backward(&grads[0])
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.0.params_mut()
    }

    fn kink_distance(&self) -> Option<f64> {
        self.0.kink_distance()
    }
}

impl Checkable for FfcHead<f64> {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(FfcHead::forward(self, x)?.logits)
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(FfcHead::infer(self, x)?.logits)
    }

    fn backward(&mut self, grads: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        FfcHead::backward(self, grads)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        FfcHead::params_mut(self)
    }

    fn kink_distance(&self) -> Option<f64> {
        FfcHead::kink_distance(self)
    }
}

impl Checkable for Model<f64> {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(Model::forward(self, x)?.logits)
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(Model::infer(self, x)?.logits)
    }

    fn backward(&mut self, grads: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Model::backward(self, grads)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        Model::params_mut(self)
    }

    fn kink_distance(&self) -> Option<f64> {
        Model::kink_distance(self)
    }
}

/// Passes its input through unchanged; used to check a loss on raw logits.
struct Passthrough;

impl Checkable for Passthrough {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![x.clone()])
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![x.clone()])
    }

    fn backward(&mut self, grads: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(grads[0].clone())
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        Vec::new()
    }

    fn kink_distance(&self) -> Option<f64> {
        None
    }
}

/// Appends the mean per-head cross-entropy to a component's logits.
struct WithLoss<C> {
    inner: C,
    labels: Vec<usize>,
    smoothing: f64,
    grads: Option<Vec<Tensor<f64>>>,
}

impl<C: Checkable> WithLoss<C> {
    fn loss(&self, logits: Vec<Tensor<f64>>) -> Result<(f64, Vec<Tensor<f64>>)> {
        let outputs = FfcOutputs {
            logits,
            features: Vec::new(),
            active_counts: Vec::new(),
        };
        train_loss(&outputs, Targets::Hard(&self.labels), self.smoothing)
    }
}

impl<C: Checkable> Checkable for WithLoss<C> {
    fn forward(&mut self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let logits = self.inner.forward(x)?;
        let (loss, grads) = self.loss(logits)?;
        self.grads = Some(grads);
        Ok(vec![Tensor::full([1], loss)])
    }

    fn infer(&self, x: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (loss, _) = self.loss(self.inner.infer(x)?)?;
        Ok(vec![Tensor::full([1], loss)])
    }

    fn backward(&mut self, grads: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let mut head_grads = self
            .grads
            .take()
            .ok_or_else(|| Error::usage("loss backward without forward"))?;
        let scale = grads[0].data()[0];
        head_grads.iter_mut().for_each(|g| g.scale(scale));
        self.inner.backward(&head_grads)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.inner.params_mut()
    }

    fn kink_distance(&self) -> Option<f64> {
        self.inner.kink_distance()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: impl Into<Vec<usize>>, bound: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

fn randomize(params: Vec<&mut Param<f64>>, rng: &mut ChaCha8Rng) {
    for p in params {
        if p.name.ends_with(".bias") {
            p.value = uniform(rng, p.value.shape().to_vec(), 0.2);
        } else if p.name.ends_with(".gain") {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::from_fn(shape, |_| 1.0 + rng.random_range(-0.3..0.3));
        }
    }
}

fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

fn ffc_head(rng: &mut ChaCha8Rng) -> FfcHead<f64> {
    let mut head = FfcHead::new(8, 5, 3, 1e-5, rng);
    randomize(head.params_mut(), rng);
    head
}

fn tiny_spec() -> ModelSpec {
    ModelSpec {
        widths: vec![4, 6],
        se_stages: vec![1],
        se_reduction: 2,
        norm_mean: vec![0.0; 2],
        norm_std: vec![1.0; 2],
        ..ModelSpec::small_conv_net(2, 4, 2)
    }
}

/// Max relative error of one component over `cfg.trials` accepted trials.
fn check_component<C: Checkable>(
    component: Component,
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
    mut build: impl FnMut(&mut ChaCha8Rng) -> Result<(C, Tensor<f64>)>,
) -> Result<GradCheckEntry> {
    let h = cfg.step;
    let mut worst = (0.0f64, String::from("-"));
    let mut note = |err: f64, at: String| {
        if err > worst.0 || err.is_nan() {
            worst = (err, at);
        }
    };
    for _ in 0..cfg.trials {
        let mut attempts = 0;
        let (mut c, x, outputs) = loop {
            let (mut c, x) = build(rng)?;
            let outputs = c.forward(&x)?;
            if c.kink_distance().is_none_or(|d| d > KINK_MARGIN) {
                break (c, x, outputs);
            }
            attempts += 1;
            if attempts >= MAX_ATTEMPTS {
                return Err(Error::Numeric(format!(
                    "{component}: no sample away from non-differentiable points"
                )));
            }
        };
        let r: Vec<Tensor<f64>> = outputs
            .iter()
            .map(|y| uniform(rng, y.shape().to_vec(), 1.0))
            .collect();
        c.params_mut().into_iter().for_each(Param::zero_grad);
        let dx = c.backward(&r)?;
        let objective = |c: &C, x: &Tensor<f64>| -> Result<f64> {
            Ok(c.infer(x)?
                .iter()
                .zip(&r)
                .map(|(y, r)| y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum())
        };
        let probe = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
            if len <= cfg.coords_per_tensor {
                (0..len).collect()
            } else {
                sample(rng, len, cfg.coords_per_tensor).into_vec()
            }
        };
        for i in probe(x.len(), rng) {
            let mut xp = x.clone();
            xp.data_mut()[i] = x.data()[i] + h;
            let plus = objective(&c, &xp)?;
            xp.data_mut()[i] = x.data()[i] - h;
            let minus = objective(&c, &xp)?;
            note(rel_error(dx.data()[i], (plus - minus) / (2.0 * h)), format!("input[{i}]"));
        }
        let analytic: Vec<(String, Tensor<f64>)> = c
            .params_mut()
            .iter()
            .map(|p| (p.name.clone(), p.grad.clone()))
            .collect();
        for (pi, (name, grad)) in analytic.iter().enumerate() {
            for i in probe(grad.len(), rng) {
                let orig = c.params_mut()[pi].value.data()[i];
                c.params_mut()[pi].value.data_mut()[i] = orig + h;
                let plus = objective(&c, &x)?;
                c.params_mut()[pi].value.data_mut()[i] = orig - h;
                let minus = objective(&c, &x)?;
                c.params_mut()[pi].value.data_mut()[i] = orig;
                note(rel_error(grad.data()[i], (plus - minus) / (2.0 * h)), format!("{name}[{i}]"));
            }
        }
    }
    Ok(GradCheckEntry {
        component,
        trials: cfg.trials,
        max_rel_error: worst.0,
        worst: worst.1,
    })
}

fn run_component(component: Component, cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<GradCheckEntry> {
    match component {
        Component::Linear => check_component(component, cfg, rng, |rng| {
            let mut l = Linear::new("linear", 5, 4, rng);
            randomize(l.params_mut(), rng);
            Ok((AsCheck(l), uniform(rng, [3, 5], 1.0)))
        }),
        Component::Conv2d => {
            let mut strided = false;
            check_component(component, cfg, rng, move |rng| {
                strided = !strided;
                let stride = if strided { 2 } else { 1 };
                let mut conv = Conv2d::new("conv", 2, 3, 3, stride, 1, rng);
                randomize(conv.params_mut(), rng);
                Ok((AsCheck(conv), uniform(rng, [2, 2, 5, 5], 1.0)))
            })
        }
        Component::Relu => check_component(component, cfg, rng, |rng| {
            Ok((AsCheck(Relu::new()), uniform(rng, [3, 7], 1.0)))
        }),
        Component::MaxPool => check_component(component, cfg, rng, |rng| {
            Ok((AsCheck(MaxPool2d::new(2, 2)), uniform(rng, [2, 2, 4, 4], 1.0)))
        }),
        Component::GlobalAvgPool => check_component(component, cfg, rng, |rng| {
            Ok((AsCheck(GlobalAvgPool::new()), uniform(rng, [2, 3, 3, 2], 1.0)))
        }),
        Component::SeBlock => check_component(component, cfg, rng, |rng| {
            let mut se = SeBlock::new("se", 4, 2, rng)?;
            randomize(se.params_mut(), rng);
            Ok((AsCheck(se), uniform(rng, [2, 4, 3, 3], 1.0)))
        }),
        Component::SoftmaxCrossEntropy => check_component(component, cfg, rng, |rng| {
            let x = uniform(rng, [4, 5], 2.0);
            let loss = WithLoss {
                inner: Passthrough,
                labels: labels(rng, 4, 5),
                smoothing: 0.1,
                grads: None,
            };
            Ok((loss, x))
        }),
        Component::FfcHead => check_component(component, cfg, rng, |rng| {
            let head = ffc_head(rng);
            Ok((head, uniform(rng, [4, 8], 1.0)))
        }),
        Component::FfcLoss => check_component(component, cfg, rng, |rng| {
            let loss = WithLoss {
                inner: ffc_head(rng),
                labels: labels(rng, 4, 5),
                smoothing: 0.1,
                grads: None,
            };
            Ok((loss, uniform(rng, [4, 8], 1.0)))
        }),
        Component::TwoLayer => check_component(component, cfg, rng, |rng| {
            let mut net = Sequential::new();
            net.push(Linear::new("fc1", 6, 5, rng));
            net.push(Relu::new());
            net.push(Linear::new("fc2", 5, 4, rng));
            randomize(net.params_mut(), rng);
            Ok((AsCheck(net), uniform(rng, [3, 6], 1.0)))
        }),
        Component::EndToEnd => check_component(component, cfg, rng, |rng| {
            let mut model = Model::<f64>::new(tiny_spec(), rng.random())?;
            randomize(model.params_mut(), rng);
            let loss = WithLoss {
                inner: model,
                labels: labels(rng, 2, 4),
                smoothing: 0.1,
                grads: None,
            };
            Ok((loss, uniform(rng, [2, 2, 8, 8], 1.0)))
        }),
    }
}

/// Runs the requested components; every one gets its own random stream.
pub fn grad_check(components: &[Component], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.trials == 0 || !(cfg.step > 0.0) || cfg.coords_per_tensor == 0 {
        return Err(Error::config("grad-check needs trials > 0, step > 0 and coords > 0"));
    }
    let entries = components
        .iter()
        .map(|&component| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let index = Component::ALL.iter().position(|&c| c == component).unwrap_or(0);
            rng.set_stream(index as u64);
            run_component(component, cfg, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(GradCheckReport { entries })
}
