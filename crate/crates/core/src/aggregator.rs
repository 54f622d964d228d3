//! The annotation-based view: majority voting, the Naive-Bayes aggregator
//! with per-annotator confusion matrices, and a neural aggregator for
//! complete annotations.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{AnnotationMatrix, ClassPrior, SoftLabelMatrix, TrustedDataset};
use crate::error::{Error, Result};
use crate::matrix::{softmax_from_logs, Matrix};
use crate::nn::{self, Mlp, Optimizer, LOG_FLOOR};
use crate::rng::{Seed, Stream};

/// `matrices[j]` is `C x C`; entry `(k, s)` is the probability annotator `j`
/// reports `s` when the truth is `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrixSet {
    pub matrices: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionExport {
    pub annotator: usize,
    pub matrix: Vec<Vec<f64>>,
}

impl ConfusionMatrixSet {
    pub fn new(matrices: Vec<Matrix>) -> Result<Self> {
        let classes = matrices.first().map_or(0, Matrix::rows);
        for (j, m) in matrices.iter().enumerate() {
            if m.rows() != classes || m.cols() != classes {
                return Err(Error::Shape(format!("confusion matrix {j} is {}x{}", m.rows(), m.cols())));
            }
            for (k, row) in m.iter_rows().enumerate() {
                crate::data::check_distribution(row)
                    .map_err(|e| Error::InvalidInput(format!("annotator {j} row {k}: {e}")))?;
            }
        }
        Ok(ConfusionMatrixSet { matrices })
    }

    pub fn annotators(&self) -> usize {
        self.matrices.len()
    }

    pub fn classes(&self) -> usize {
        self.matrices.first().map_or(0, Matrix::rows)
    }

    pub fn export(&self) -> Vec<ConfusionExport> {
        self.matrices
            .iter()
            .enumerate()
            .map(|(j, m)| ConfusionExport { annotator: j, matrix: m.iter_rows().map(<[f64]>::to_vec).collect() })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.export())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut rows: Vec<ConfusionExport> = serde_json::from_str(s)?;
        rows.sort_by_key(|r| r.annotator);
        let matrices = rows
            .iter()
            .map(|r| Matrix::from_rows(&r.matrix, r.matrix.len()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(matrices)
    }
}

/// A posterior plus whether it is a uniform fallback for a degenerate input.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub probs: Vec<f64>,
    pub degenerate: bool,
}

fn vote_counts(row: &[Option<usize>], classes: usize, i: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; classes];
    let mut seen = false;
    for label in row.iter().flatten() {
        if *label >= classes {
            return Err(Error::InvalidInput(format!("row {i}: label {label} >= {classes}")));
        }
        counts[*label] += 1;
        seen = true;
    }
    if !seen {
        return Err(Error::InvalidInput(format!("all-missing row at index {i}")));
    }
    Ok(counts)
}

/// Soft majority vote: the modal class gets probability one, ties share it uniformly.
pub fn majority_vote(annotations: &AnnotationMatrix, classes: usize) -> Result<SoftLabelMatrix> {
    let mut out = Matrix::zeros(annotations.n(), classes);
    for (i, row) in annotations.iter_rows().enumerate() {
        let counts = vote_counts(row, classes, i)?;
        let top = *counts.iter().max().expect("classes > 0");
        let ties = counts.iter().filter(|&&c| c == top).count() as f64;
        for (k, &c) in counts.iter().enumerate() {
            if c == top {
                out.set(i, k, 1.0 / ties);
            }
        }
    }
    SoftLabelMatrix::new(out)
}

/// Hard majority vote; ties go to the lowest class index.
pub fn hard_majority_vote(annotations: &AnnotationMatrix, classes: usize) -> Result<Vec<usize>> {
    annotations
        .iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let counts = vote_counts(row, classes, i)?;
            let top = *counts.iter().max().expect("classes > 0");
            Ok(counts.iter().position(|&c| c == top).expect("max exists"))
        })
        .collect()
}

/// `P(Y = k | row) ∝ q_k * prod_{j observed} pi^(j)[k][row_j]`, in log space.
/// Missing cells contribute no factor.
pub fn nb_posterior(row: &[Option<usize>], confusions: &ConfusionMatrixSet, prior: &ClassPrior) -> Result<Posterior> {
    let classes = prior.classes();
    if row.len() != confusions.annotators() || confusions.classes() != classes {
        return Err(Error::Shape(format!(
            "row of {} annotators against {} confusion matrices of {} classes (prior has {classes})",
            row.len(),
            confusions.annotators(),
            confusions.classes()
        )));
    }
    let mut logs: Vec<f64> = prior.probs().iter().map(|q| q.max(LOG_FLOOR).ln()).collect();
    for (j, cell) in row.iter().enumerate() {
        if let Some(s) = *cell {
            if s >= classes {
                return Err(Error::InvalidInput(format!("label {s} >= {classes}")));
            }
            let pi = &confusions.matrices[j];
            for (k, l) in logs.iter_mut().enumerate() {
                *l += pi.get(k, s).max(LOG_FLOOR).ln();
            }
        }
    }
    if logs.iter().any(|l| !l.is_finite()) {
        warn!("naive-Bayes posterior underflowed; falling back to uniform");
        return Ok(Posterior { probs: vec![1.0 / classes as f64; classes], degenerate: true });
    }
    Ok(Posterior { probs: softmax_from_logs(&logs), degenerate: false })
}

/// Posterior for every row, plus the number of uniform fallbacks.
pub fn nb_posteriors(
    annotations: &AnnotationMatrix,
    confusions: &ConfusionMatrixSet,
    prior: &ClassPrior,
) -> Result<(SoftLabelMatrix, usize)> {
    let classes = prior.classes();
    let mut out = Matrix::zeros(annotations.n(), classes);
    let mut fallbacks = 0;
    for (i, row) in annotations.iter_rows().enumerate() {
        let p = nb_posterior(row, confusions, prior)?;
        fallbacks += usize::from(p.degenerate);
        out.row_mut(i).copy_from_slice(&p.probs);
    }
    Ok((SoftLabelMatrix::new(out)?, fallbacks))
}

/// Soft-count confusion estimates, summing only over instances each
/// annotator labeled:
/// `pi[j][k][s] = (sum_i 1[y_ij = s] c_ik + alpha) / (sum_i c_ik + alpha C)`.
pub fn fit_nb_confusions(
    annotations: &AnnotationMatrix,
    colabels: &SoftLabelMatrix,
    alpha: f64,
) -> Result<ConfusionMatrixSet> {
    if annotations.n() != colabels.n() {
        return Err(Error::Shape(format!("{} annotation rows vs {} co-labels", annotations.n(), colabels.n())));
    }
    if alpha < 0.0 {
        return Err(Error::InvalidInput(format!("confusion smoothing {alpha} < 0")));
    }
    let classes = colabels.classes();
    let mut matrices = Vec::with_capacity(annotations.m());
    for j in 0..annotations.m() {
        let mut counts = Matrix::zeros(classes, classes);
        let mut observed = 0usize;
        for i in 0..annotations.n() {
            if let Some(s) = annotations.get(i, j) {
                if s >= classes {
                    return Err(Error::InvalidInput(format!("label {s} >= {classes}")));
                }
                observed += 1;
                for (k, &c) in colabels.row(i).iter().enumerate() {
                    counts.set(k, s, counts.get(k, s) + c);
                }
            }
        }
        if observed == 0 {
            warn!("annotator {j} labeled no instance; using a uniform confusion matrix");
        }
        for k in 0..classes {
            let row = counts.row_mut(k);
            let mass: f64 = row.iter().sum();
            let denom = mass + alpha * classes as f64;
            if denom > 0.0 {
                row.iter_mut().for_each(|v| *v = (*v + alpha) / denom);
            } else {
                row.fill(1.0 / classes as f64);
            }
        }
        matrices.push(counts);
    }
    Ok(ConfusionMatrixSet { matrices })
}

/// `sum_i sum_k -c_ik log posterior_i[k]`.
pub fn nb_loss(
    annotations: &AnnotationMatrix,
    colabels: &SoftLabelMatrix,
    confusions: &ConfusionMatrixSet,
    prior: &ClassPrior,
) -> Result<f64> {
    if annotations.n() != colabels.n() {
        return Err(Error::Shape("annotation and co-label row counts differ".into()));
    }
    let mut total = 0.0;
    for (i, row) in annotations.iter_rows().enumerate() {
        let p = nb_posterior(row, confusions, prior)?;
        total += nn::soft_cross_entropy(&p.probs, colabels.row(i));
    }
    Ok(total)
}

/// Fits confusions on the trusted set (clean labels as one-hot co-labels)
/// and returns the posterior of every untrusted row.
pub fn init_colabels_trusted_nb(
    trusted: &TrustedDataset,
    untrusted: &AnnotationMatrix,
    prior: &ClassPrior,
    alpha: f64,
) -> Result<SoftLabelMatrix> {
    let trusted_ann = trusted
        .annotations
        .as_ref()
        .ok_or_else(|| Error::MissingAnnotation("trusted set has no annotations".into()))?;
    if !trusted_ann.is_complete() {
        return Err(Error::MissingAnnotation("trusted annotations have missing cells".into()));
    }
    let onehot = SoftLabelMatrix::one_hot(&trusted.labels(), prior.classes());
    let confusions = fit_nb_confusions(trusted_ann, &onehot, alpha)?;
    Ok(nb_posteriors(untrusted, &confusions, prior)?.0)
}

/// Neural aggregator over the concatenated one-hot encoding of `m` labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralAggregatorParams {
    pub annotators: usize,
    pub classes: usize,
    pub net: Mlp,
}

pub fn init_neural_aggregator(annotators: usize, classes: usize, hidden: &[usize], seed: Seed) -> NeuralAggregatorParams {
    let mut rng = seed.stream("aggregator-init");
    NeuralAggregatorParams { annotators, classes, net: Mlp::new(annotators * classes, hidden, classes, &mut rng) }
}

fn encode_row(row: &[Option<usize>], classes: usize, out: &mut [f64]) -> Result<()> {
    out.fill(0.0);
    for (j, cell) in row.iter().enumerate() {
        match *cell {
            Some(s) if s < classes => out[j * classes + s] = 1.0,
            Some(s) => return Err(Error::InvalidInput(format!("label {s} >= {classes}"))),
            None => return Err(Error::MissingAnnotation(format!("annotator {j} is missing"))),
        }
    }
    Ok(())
}

/// `n x (m C)` one-hot encoding; fails on any missing cell.
pub fn encode_annotations(annotations: &AnnotationMatrix, classes: usize) -> Result<Matrix> {
    let width = annotations.m() * classes;
    let mut out = Matrix::zeros(annotations.n(), width);
    for (i, row) in annotations.iter_rows().enumerate() {
        encode_row(row, classes, out.row_mut(i)).map_err(|e| match e {
            Error::MissingAnnotation(msg) => Error::MissingAnnotation(format!("row {i}: {msg}")),
            other => other,
        })?;
    }
    Ok(out)
}

/// Mini-batch soft cross-entropy training; returns the per-epoch mean loss.
pub fn fit_neural_aggregator(
    params: &mut NeuralAggregatorParams,
    annotations: &AnnotationMatrix,
    colabels: &SoftLabelMatrix,
    opt: &mut Optimizer,
    epochs: usize,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    if annotations.m() != params.annotators || colabels.classes() != params.classes {
        return Err(Error::Shape("annotations do not match the aggregator shape".into()));
    }
    let xs = encode_annotations(annotations, params.classes)?;
    nn::train_epochs(&mut params.net, opt, &xs, colabels.as_matrix(), None, epochs, rng)
}

pub fn neural_aggregator_predict(params: &NeuralAggregatorParams, row: &[Option<usize>]) -> Result<Vec<f64>> {
    if row.len() != params.annotators {
        return Err(Error::Shape(format!("row of {} labels for {} annotators", row.len(), params.annotators)));
    }
    let mut x = vec![0.0; params.annotators * params.classes];
    encode_row(row, params.classes, &mut x)?;
    Ok(params.net.forward(&x))
}

pub fn neural_aggregator_predict_all(params: &NeuralAggregatorParams, annotations: &AnnotationMatrix) -> Result<SoftLabelMatrix> {
    let xs = encode_annotations(annotations, params.classes)?;
    SoftLabelMatrix::new(params.net.predict(&xs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledExample;
    use crate::nn::OptimizerConfig;

    fn cms(ms: &[Vec<Vec<f64>>]) -> ConfusionMatrixSet {
        ConfusionMatrixSet::new(ms.iter().map(|m| Matrix::from_rows(m, m.len()).unwrap()).collect()).unwrap()
    }

    fn ann(rows: Vec<Vec<Option<usize>>>) -> AnnotationMatrix {
        AnnotationMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn majority_vote_examples() {
        let a = ann(vec![vec![Some(2), Some(2), Some(2)], vec![Some(1), Some(1), Some(0)]]);
        let mv = majority_vote(&a, 3).unwrap();
        assert_eq!(mv.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(mv.row(1), &[0.0, 1.0, 0.0]);
        let mv = majority_vote(&ann(vec![vec![Some(0), Some(1), None]]), 2).unwrap();
        assert_eq!(mv.row(0), &[0.5, 0.5]);
        assert!(majority_vote(&ann(vec![vec![None, None]]), 2).is_err());
        assert_eq!(hard_majority_vote(&ann(vec![vec![Some(2), Some(1), None]]), 3).unwrap(), vec![1]);
    }

    #[test]
    fn posterior_examples() {
        let id = cms(&[vec![vec![1.0, 0.0], vec![0.0, 1.0]]]);
        let p = nb_posterior(&[Some(0)], &id, &ClassPrior::uniform(2)).unwrap();
        assert!((p.probs[0] - 1.0).abs() < 1e-10 && p.probs[1] < 1e-10);

        let pi = cms(&[vec![vec![0.8, 0.2], vec![0.3, 0.7]]]);
        let p = nb_posterior(&[Some(0)], &pi, &ClassPrior::uniform(2)).unwrap();
        assert!((p.probs[0] - 0.4 / 0.55).abs() < 1e-12);
        assert!((p.probs[0] - 0.7273).abs() < 1e-4);

        let two = cms(&[vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![vec![0.9, 0.1], vec![0.2, 0.8]]]);
        let prior = ClassPrior::new(vec![0.6, 0.4]).unwrap();
        let p = nb_posterior(&[Some(0), Some(1)], &two, &prior).unwrap();
        assert!((p.probs[0] - 0.054 / 0.118).abs() < 1e-12);
        assert!((p.probs[1] - 0.5424).abs() < 1e-4);
        // a missing annotator contributes nothing
        let p1 = nb_posterior(&[Some(0), None], &two, &prior).unwrap();
        let single = cms(&[vec![vec![0.9, 0.1], vec![0.2, 0.8]]]);
        let p2 = nb_posterior(&[Some(0)], &single, &prior).unwrap();
        assert!((p1.probs[0] - p2.probs[0]).abs() < 1e-15);
    }

    #[test]
    fn posterior_proportional_to_column() {
        let pi = vec![vec![0.5, 0.3, 0.2], vec![0.1, 0.6, 0.3], vec![0.25, 0.25, 0.5]];
        let set = cms(std::slice::from_ref(&pi));
        for s in 0..3 {
            let p = nb_posterior(&[Some(s)], &set, &ClassPrior::uniform(3)).unwrap();
            let col: Vec<f64> = pi.iter().map(|r| r[s]).collect();
            let z: f64 = col.iter().sum();
            for k in 0..3 {
                assert!((p.probs[k] - col[k] / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confusion_fit_examples() {
        let a = ann(vec![vec![Some(0)], vec![Some(1)]]);
        let c = fit_nb_confusions(&a, &SoftLabelMatrix::one_hot(&[0, 1], 2), 0.0).unwrap();
        assert_eq!(c.matrices[0].as_slice(), &[1.0, 0.0, 0.0, 1.0]);

        let half = SoftLabelMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]], 2).unwrap();
        let c = fit_nb_confusions(&a, &half, 0.0).unwrap();
        assert_eq!(c.matrices[0].as_slice(), &[0.5, 0.5, 0.5, 0.5]);

        let c = fit_nb_confusions(&a, &SoftLabelMatrix::one_hot(&[0, 0], 2), 0.01).unwrap();
        assert!((c.matrices[0].get(1, 0) - 0.5).abs() < 1e-15);
        assert!((c.matrices[0].get(1, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn confusion_fit_ignores_unlabeled_and_handles_empty_column() {
        let a = ann(vec![vec![Some(0), None], vec![None, None], vec![Some(1), None]]);
        let colabels = SoftLabelMatrix::one_hot(&[0, 1, 1], 2);
        let c = fit_nb_confusions(&a, &colabels, 0.0).unwrap();
        assert_eq!(c.matrices[0].as_slice(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(c.matrices[1].as_slice(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn loss_examples() {
        let id = cms(&[vec![vec![1.0, 0.0], vec![0.0, 1.0]]]);
        let a = ann(vec![vec![Some(0)], vec![Some(1)]]);
        let l = nb_loss(&a, &SoftLabelMatrix::one_hot(&[0, 1], 2), &id, &ClassPrior::uniform(2)).unwrap();
        assert!(l < 1e-10);

        let flat = cms(&[vec![vec![0.5, 0.5], vec![0.5, 0.5]]]);
        let l = nb_loss(&ann(vec![vec![Some(0)]]), &SoftLabelMatrix::one_hot(&[0], 2), &flat, &ClassPrior::uniform(2))
            .unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);

        let pi = cms(&[vec![vec![0.8, 0.2], vec![0.3, 0.7]]]);
        let l = nb_loss(&ann(vec![vec![Some(0)]]), &SoftLabelMatrix::one_hot(&[0], 2), &pi, &ClassPrior::uniform(2))
            .unwrap();
        assert!((l - 0.3185).abs() < 1e-4, "{l}");
    }

    fn trusted_with(labels: &[usize], rows: Vec<Vec<Option<usize>>>) -> TrustedDataset {
        let examples = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| LabeledExample { id: format!("t{i}"), features: vec![0.0], label: y })
            .collect();
        TrustedDataset::new(examples, Some(ann(rows))).unwrap()
    }

    #[test]
    fn trusted_init_single_identity_annotator() {
        let labels = [0, 1, 2, 0, 1, 2];
        let trusted = trusted_with(&labels, labels.iter().map(|&y| vec![Some(y)]).collect());
        let untrusted = ann(vec![vec![Some(2)], vec![Some(0)], vec![Some(1)]]);
        let c = init_colabels_trusted_nb(&trusted, &untrusted, &ClassPrior::uniform(3), 0.0).unwrap();
        assert_eq!(c.hard_labels(), vec![2, 0, 1]);
        assert!(c.row(0)[2] > 1.0 - 1e-9);
    }

    #[test]
    fn trusted_init_inverts_adversary() {
        let labels = [0, 1, 0, 1, 0, 1];
        let trusted = trusted_with(&labels, labels.iter().map(|&y| vec![Some(1 - y)]).collect());
        let untrusted = ann(vec![vec![Some(0)], vec![Some(1)]]);
        let c = init_colabels_trusted_nb(&trusted, &untrusted, &ClassPrior::uniform(2), 0.01).unwrap();
        assert_eq!(c.hard_labels(), vec![1, 0]);
    }

    #[test]
    fn trusted_init_prefers_accurate_annotator() {
        // annotator 0 perfect, annotators 1 and 2 uniform noise
        let mut labels = Vec::new();
        let mut rows = Vec::new();
        for i in 0..90 {
            let y = i % 3;
            labels.push(y);
            rows.push(vec![Some(y), Some((i / 3) % 3), Some((i / 9) % 3)]);
        }
        let trusted = trusted_with(&labels, rows);
        let untrusted = ann(vec![vec![Some(1), Some(0), Some(0)], vec![Some(2), Some(1), Some(1)]]);
        let c = init_colabels_trusted_nb(&trusted, &untrusted, &ClassPrior::uniform(3), 0.01).unwrap();
        assert_eq!(c.hard_labels(), vec![1, 2]);
        assert!(c.row(0)[1] > 0.9);
    }

    #[test]
    fn trusted_init_requires_annotations() {
        let t = TrustedDataset::new(vec![LabeledExample { id: "a".into(), features: vec![], label: 0 }], None).unwrap();
        let u = ann(vec![vec![Some(0)]]);
        assert!(matches!(
            init_colabels_trusted_nb(&t, &u, &ClassPrior::uniform(2), 0.01),
            Err(Error::MissingAnnotation(_))
        ));
    }

    #[test]
    fn confusion_json_roundtrip() {
        let c = cms(&[vec![vec![0.8, 0.2], vec![0.3, 0.7]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]]);
        let json = c.to_json().unwrap();
        assert!(json.contains("\"annotator\": 1"));
        assert_eq!(ConfusionMatrixSet::from_json(&json).unwrap(), c);
    }

    #[test]
    fn neural_aggregator_basics() {
        let mut p = init_neural_aggregator(3, 2, &[64, 32], Seed(1));
        let before = p.clone();
        let a = ann(vec![vec![Some(0), Some(1), Some(0)]]);
        let target = SoftLabelMatrix::from_rows(&[vec![0.8, 0.2]], 2).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01));
        fit_neural_aggregator(&mut p, &a, &target, &mut opt, 0, &mut Seed(1).stream("a")).unwrap();
        assert_eq!(p, before);

        let out = neural_aggregator_predict(&p, a.row(0)).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        let mut z = p.clone();
        let last = z.net.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        assert_eq!(neural_aggregator_predict(&z, a.row(0)).unwrap(), vec![0.5, 0.5]);

        assert!(matches!(
            neural_aggregator_predict(&p, &[Some(0), None, Some(1)]),
            Err(Error::MissingAnnotation(_))
        ));
        let sparse = ann(vec![vec![Some(0), None, Some(0)]]);
        assert!(matches!(
            fit_neural_aggregator(&mut p, &sparse, &target, &mut opt, 1, &mut Seed(1).stream("a")),
            Err(Error::MissingAnnotation(_))
        ));
    }

    #[test]
    fn neural_aggregator_overfits_one_instance() {
        let mut p = init_neural_aggregator(3, 3, &[64, 32], Seed(2));
        let a = ann(vec![vec![Some(0), Some(2), Some(1)]]);
        let target = SoftLabelMatrix::from_rows(&[vec![0.6, 0.3, 0.1]], 3).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.001));
        fit_neural_aggregator(&mut p, &a, &target, &mut opt, 500, &mut Seed(2).stream("a")).unwrap();
        let out = neural_aggregator_predict(&p, a.row(0)).unwrap();
        let tv: f64 = 0.5 * out.iter().zip(target.row(0)).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn annotator_permutation_symmetry() {
        let (m, c) = (3, 3);
        let p = init_neural_aggregator(m, c, &[8], Seed(3));
        let perm = [2, 0, 1];
        // permuted network reads annotator perm[j] at position j
        let mut q = p.clone();
        let first = &mut q.net.layers[0];
        let orig = &p.net.layers[0];
        for o in 0..first.outputs {
            for j in 0..m {
                for s in 0..c {
                    first.weights[o * first.inputs + j * c + s] = orig.weights[o * orig.inputs + perm[j] * c + s];
                }
            }
        }
        let row = [Some(1), Some(0), Some(2)];
        let permuted: Vec<Option<usize>> = perm.iter().map(|&j| row[j]).collect();
        let a = neural_aggregator_predict(&p, &row).unwrap();
        let b = neural_aggregator_predict(&q, &permuted).unwrap();
        for k in 0..c {
            assert!((a[k] - b[k]).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn posterior_is_order_invariant(
            raw in proptest::collection::vec(0.05f64..1.0, 18),
            obs in proptest::collection::vec(0usize..3, 3),
        ) {
            let mats: Vec<Matrix> = raw.chunks(9).map(|c| {
                let mut m = Matrix::from_vec(3, 3, c.to_vec()).unwrap();
                for k in 0..3 {
                    let s: f64 = m.row(k).iter().sum();
                    m.row_mut(k).iter_mut().for_each(|v| *v /= s);
                }
                m
            }).collect();
            let fwd = ConfusionMatrixSet::new(vec![mats[0].clone(), mats[1].clone()]).unwrap();
            let rev = ConfusionMatrixSet::new(vec![mats[1].clone(), mats[0].clone()]).unwrap();
            let prior = ClassPrior::uniform(3);
            let a = nb_posterior(&[Some(obs[0]), Some(obs[1])], &fwd, &prior).unwrap();
            let b = nb_posterior(&[Some(obs[1]), Some(obs[0])], &rev, &prior).unwrap();
            for k in 0..3 {
                proptest::prop_assert!((a.probs[k] - b.probs[k]).abs() < 1e-12);
            }
        }

        #[test]
        fn onehot_fit_is_empirical_confusion(truth in proptest::collection::vec(0usize..3, 30), labels in proptest::collection::vec(0usize..3, 30)) {
            let a = AnnotationMatrix::from_rows(labels.iter().map(|&l| vec![Some(l)]).collect()).unwrap();
            let c = fit_nb_confusions(&a, &SoftLabelMatrix::one_hot(&truth, 3), 0.0).unwrap();
            let labels: Vec<Option<usize>> = labels.into_iter().map(Some).collect();
            let emp = crate::noise::empirical_confusion(&truth, &labels, 3);
            for k in 0..3 {
                if truth.contains(&k) {
                    for s in 0..3 {
                        proptest::prop_assert!((c.matrices[0].get(k, s) - emp.get(k, s)).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
