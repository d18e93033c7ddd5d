use super::eval::predict;
use super::ExecConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ffc::{accuracy, mean_softmax};
use crate::model::Model;
use crate::tensor::{argmax, Tensor};

/// Accuracy of each member and of their averaged prediction distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub individual: Vec<f64>,
    pub ensembled: f64,
}

/// Row-wise argmax of the mean of `dists` (each `N x K`).
pub fn average_distributions(dists: &[Tensor<f64>]) -> Result<Vec<usize>> {
    let first = dists
        .first()
        .ok_or_else(|| Error::config("nothing to ensemble"))?;
    if let Some(bad) = dists.iter().find(|d| d.shape() != first.shape()) {
        return Err(Error::Dimension {
            op: "average_distributions",
            lhs: first.shape().to_vec(),
            rhs: bad.shape().to_vec(),
        });
    }
    let (n, k) = (first.dim(0), first.dim(1));
    let count = dists.len() as f64;
    Ok((0..n)
        .map(|i| {
            let mut mean = vec![0.0; k];
            for d in dists {
                for (m, &p) in mean.iter_mut().zip(d.row(i)) {
                    *m += p;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            argmax(&mean)
        })
        .collect())
}

/// Averages the members' prediction distributions (the mean softmax over
/// heads for each model) and scores the argmax.
pub fn ensemble_models(
    models: &[&Model<f32>],
    dataset: &Dataset,
    exec: &ExecConfig,
) -> Result<EnsembleResult> {
    if models.len() < 2 {
        return Err(Error::config("ensembling needs at least two models"));
    }
    let classes = models[0].spec.classes;
    if let Some(m) = models.iter().find(|m| m.spec.classes != classes) {
        return Err(Error::config(format!(
            "cannot ensemble models with {classes} and {} classes",
            m.spec.classes
        )));
    }
    let mut dists = Vec::with_capacity(models.len());
    let mut individual = Vec::with_capacity(models.len());
    for model in models {
        let dist = mean_softmax(&predict(model, dataset, exec)?.logits);
        individual.push(accuracy(&average_distributions(std::slice::from_ref(&dist))?, &dataset.labels));
        dists.push(dist);
    }
    Ok(EnsembleResult {
        individual,
        ensembled: accuracy(&average_distributions(&dists)?, &dataset.labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn dist(rows: &[[f64; 3]]) -> Tensor<f64> {
        Tensor::new([rows.len(), 3], rows.concat()).unwrap()
    }

    #[test]
    fn confident_member_rescues_disagreements() {
        let labels = [0, 1, 2, 0];
        // a is right on samples 0, 1 and confidently right on 2; b only on 0, 3
        let a = dist(&[[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.05, 0.05, 0.9], [0.3, 0.4, 0.3]]);
        let b = dist(&[[0.5, 0.3, 0.2], [0.4, 0.35, 0.25], [0.4, 0.3, 0.3], [0.9, 0.05, 0.05]]);
        let acc = |d: &[Tensor<f64>]| accuracy(&average_distributions(d).unwrap(), &labels);
        let (ea, eb) = (acc(&[a.clone()]), acc(&[b.clone()]));
        assert_eq!((ea, eb), (0.75, 0.5));
        let both = acc(&[a, b]);
        assert!(both >= ea.min(eb));
        assert_eq!(both, 1.0);
    }

    #[test]
    fn model_with_itself_is_idempotent() {
        let spec = ModelSpec {
            widths: vec![4],
            ..ModelSpec::small_conv_net(1, 3, 2)
        };
        let model = Model::<f32>::new(spec, 1).unwrap();
        let images = Tensor::from_fn([30, 1, 6, 6], |i| ((i * 13) % 29) as f32 / 29.0);
        let ds = Dataset::new(images, (0..30).map(|i| i % 3).collect(), 3).unwrap();
        let r = ensemble_models(&[&model, &model], &ds, &ExecConfig::default()).unwrap();
        assert_eq!(r.individual[0], r.individual[1]);
        assert_eq!(r.ensembled, r.individual[0]);
    }

    #[test]
    fn rejects_single_model_and_class_mismatch() {
        let a = Model::<f32>::new(ModelSpec { widths: vec![4], ..ModelSpec::small_conv_net(1, 3, 0) }, 0).unwrap();
        let b = Model::<f32>::new(ModelSpec { widths: vec![4], ..ModelSpec::small_conv_net(1, 4, 0) }, 0).unwrap();
        let images = Tensor::zeros([2, 1, 4, 4]);
        let ds = Dataset::new(images, vec![0, 1], 3).unwrap();
        let exec = ExecConfig::default();
        assert!(matches!(ensemble_models(&[&a], &ds, &exec), Err(Error::Config(_))));
        assert!(matches!(ensemble_models(&[&a, &b], &ds, &exec), Err(Error::Config(_))));
    }
}
