//! The feature-based view: a feed-forward network trained on soft labels.

use serde::{Deserialize, Serialize};

use crate::data::{SoftLabelMatrix, TrustedDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, Mlp, Optimizer, OptimizerConfig};
use crate::rng::{Seed, Stream};

pub use crate::nn::soft_cross_entropy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassifierParams {
    pub net: Mlp,
}

impl ClassifierParams {
    pub fn feature_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }
}

/// Fresh parameters, deterministic in `seed`. Empty `hidden` gives softmax regression.
pub fn init_classifier(dim: usize, hidden: &[usize], classes: usize, seed: Seed) -> Result<ClassifierParams> {
    if dim == 0 || classes == 0 || hidden.contains(&0) {
        return Err(Error::InvalidInput(format!("classifier dims d={dim}, hidden={hidden:?}, C={classes}")));
    }
    let mut rng = seed.stream("classifier-init");
    Ok(ClassifierParams { net: Mlp::new(dim, hidden, classes, &mut rng) })
}

/// Softmax predictions, one row per input.
pub fn predict_proba(params: &ClassifierParams, features: &Matrix) -> Result<SoftLabelMatrix> {
    Ok(SoftLabelMatrix::new(params.net.predict(features)?).expect("softmax rows are distributions"))
}

/// Trains for `opt.config.epochs` epochs with per-epoch reshuffling from `rng`.
pub fn train_epochs(
    params: &mut ClassifierParams,
    features: &Matrix,
    targets: &SoftLabelMatrix,
    opt: &mut Optimizer,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    let epochs = opt.config.epochs;
    train_weighted(params, features, targets, None, opt, epochs, rng)
}

pub fn train_weighted(
    params: &mut ClassifierParams,
    features: &Matrix,
    targets: &SoftLabelMatrix,
    weights: Option<&[f64]>,
    opt: &mut Optimizer,
    epochs: usize,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    if features.rows() != targets.n() {
        return Err(Error::Shape(format!("{} feature rows vs {} targets", features.rows(), targets.n())));
    }
    nn::train_epochs(&mut params.net, opt, features, targets.as_matrix(), weights, epochs, rng)
}

/// Further training on the trusted set with one-hot targets.
pub fn fine_tune(
    params: &mut ClassifierParams,
    trusted: &TrustedDataset,
    opt: &OptimizerConfig,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    if trusted.is_empty() {
        return Err(Error::Empty("trusted set"));
    }
    let targets = SoftLabelMatrix::one_hot(&trusted.labels(), params.classes());
    let mut state = Optimizer::new(opt.clone());
    train_epochs(params, &trusted.features(), &targets, &mut state, rng)
}

/// Fraction of rows whose predicted argmax equals the label.
pub fn accuracy(params: &ClassifierParams, features: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(predict_proba(params, features)?.accuracy(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledExample;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = Seed(seed).stream("blobs");
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let c = if y == 0 { -2.0 } else { 2.0 };
            rows.push(vec![c + noise.sample(&mut rng), noise.sample(&mut rng)]);
            labels.push(y);
        }
        (Matrix::from_rows(&rows, 2).unwrap(), labels)
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_classifier(3, &[4], 2, Seed(9)).unwrap();
        let b = init_classifier(3, &[4], 2, Seed(9)).unwrap();
        let c = init_classifier(3, &[4], 2, Seed(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let lr = init_classifier(3, &[], 2, Seed(9)).unwrap();
        assert_eq!(lr.net.layers.len(), 1);
        assert!(init_classifier(0, &[4], 2, Seed(1)).is_err());
    }

    #[test]
    fn zero_epochs_is_noop() {
        let (x, y) = blobs(20, 1);
        let mut p = init_classifier(2, &[8], 2, Seed(1)).unwrap();
        let before = p.clone();
        let mut opt = Optimizer::new(OptimizerConfig::default().with_epochs(0));
        let trace = train_epochs(&mut p, &x, &SoftLabelMatrix::one_hot(&y, 2), &mut opt, &mut Seed(1).stream("s")).unwrap();
        assert!(trace.is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(400, 2);
        let mut p = init_classifier(2, &[32], 2, Seed(2)).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig { step_size: 0.05, epochs: 50, ..Default::default() });
        train_epochs(&mut p, &x, &SoftLabelMatrix::one_hot(&y, 2), &mut opt, &mut Seed(2).stream("s")).unwrap();
        assert!(accuracy(&p, &x, &y).unwrap() >= 0.99);
    }

    #[test]
    fn zero_final_layer_gives_uniform_rows() {
        let mut p = init_classifier(2, &[5], 3, Seed(3)).unwrap();
        let last = p.net.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        let (x, _) = blobs(10, 3);
        let probs = predict_proba(&p, &x).unwrap();
        for r in probs.iter_rows() {
            assert!(r.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn scaling_logits_keeps_argmax() {
        let p = init_classifier(2, &[5], 3, Seed(4)).unwrap();
        let mut q = p.clone();
        let last = q.net.layers.last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w *= 2.0);
        last.bias.iter_mut().for_each(|w| *w *= 2.0);
        let (x, _) = blobs(50, 4);
        let a = predict_proba(&p, &x).unwrap().hard_labels();
        let b = predict_proba(&q, &x).unwrap().hard_labels();
        assert_eq!(a, b);
        assert!(predict_proba(&p, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn fine_tune_single_example() {
        let mut p = init_classifier(2, &[8], 3, Seed(5)).unwrap();
        let trusted = TrustedDataset::new(
            vec![LabeledExample { id: "t".into(), features: vec![0.3, -0.7], label: 2 }],
            None,
        )
        .unwrap();
        let opt = OptimizerConfig { step_size: 0.1, epochs: 200, ..Default::default() };
        fine_tune(&mut p, &trusted, &opt, &mut Seed(5).stream("f")).unwrap();
        assert_eq!(accuracy(&p, &trusted.features(), &[2]).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(100, 6);
        let t = SoftLabelMatrix::one_hot(&y, 2);
        let run = || {
            let mut p = init_classifier(2, &[8], 2, Seed(6)).unwrap();
            let mut opt = Optimizer::new(OptimizerConfig { epochs: 5, ..Default::default() });
            train_epochs(&mut p, &x, &t, &mut opt, &mut Seed(6).stream("s")).unwrap();
            p
        };
        assert_eq!(run(), run());
    }
}
