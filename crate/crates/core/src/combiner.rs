//! Product-rule fusion of the two views: `Nor[p_d[k] * p_l[k] / q_k]`.

use log::warn;

use crate::aggregator::Posterior;
use crate::data::{ClassPrior, SoftLabelMatrix};
use crate::error::{Error, Result};
use crate::matrix::{softmax_from_logs, Matrix};
use crate::nn::LOG_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    DataClassifier,
    LabelAggregator,
}

impl Source {
    fn name(self) -> &'static str {
        match self {
            Source::DataClassifier => "the data classifier",
            Source::LabelAggregator => "the label aggregator",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pub rows: SoftLabelMatrix,
    pub source: Source,
    pub calibrated: bool,
}

impl PredictionBatch {
    pub fn new(rows: SoftLabelMatrix, source: Source, calibrated: bool) -> Self {
        PredictionBatch { rows, source, calibrated }
    }
}

/// Fuses two conditionally independent estimates of the class posterior.
/// Falls back to uniform when no class keeps unfloored mass in both inputs.
pub fn combine(p_d: &[f64], p_l: &[f64], prior: &ClassPrior) -> Posterior {
    let q = prior.probs();
    let classes = q.len();
    debug_assert_eq!(p_d.len(), classes);
    debug_assert_eq!(p_l.len(), classes);
    let disjoint = p_d.iter().zip(p_l).all(|(&a, &b)| a <= LOG_FLOOR || b <= LOG_FLOOR);
    if disjoint {
        return Posterior { probs: vec![1.0 / classes as f64; classes], degenerate: true };
    }
    let logs: Vec<f64> = (0..classes)
        .map(|k| p_d[k].max(LOG_FLOOR).ln() + p_l[k].max(LOG_FLOOR).ln() - q[k].max(LOG_FLOOR).ln())
        .collect();
    Posterior { probs: softmax_from_logs(&logs), degenerate: false }
}

fn combine_rows(d: &SoftLabelMatrix, l: &SoftLabelMatrix, prior: &ClassPrior) -> Result<SoftLabelMatrix> {
    if d.n() != l.n() || d.classes() != l.classes() || d.classes() != prior.classes() {
        return Err(Error::Shape(format!(
            "combining {}x{} with {}x{} under a {}-class prior",
            d.n(),
            d.classes(),
            l.n(),
            l.classes(),
            prior.classes()
        )));
    }
    let mut out = Matrix::zeros(d.n(), d.classes());
    let mut fallbacks = 0usize;
    for i in 0..d.n() {
        let c = combine(d.row(i), l.row(i), prior);
        fallbacks += usize::from(c.degenerate);
        out.row_mut(i).copy_from_slice(&c.probs);
    }
    if fallbacks > 0 {
        warn!("{fallbacks} rows had disjoint support in both views; set to uniform");
    }
    SoftLabelMatrix::new(out)
}

/// Row-wise fusion into new co-labels. The data-classifier batch must be
/// calibrated; pass `require_both` for the complete-data variant, which also
/// calibrates the aggregator.
pub fn combine_batch(
    batch_d: &PredictionBatch,
    batch_l: &PredictionBatch,
    prior: &ClassPrior,
    require_both: bool,
) -> Result<SoftLabelMatrix> {
    for b in [batch_d, batch_l] {
        let required = b.source == Source::DataClassifier || require_both;
        if required && !b.calibrated {
            return Err(Error::Uncalibrated(b.source.name()));
        }
    }
    combine_rows(&batch_d.rows, &batch_l.rows, prior)
}

/// Fusion without the calibration precondition, for the no-calibration ablation.
pub fn combine_batch_uncalibrated(
    batch_d: &PredictionBatch,
    batch_l: &PredictionBatch,
    prior: &ClassPrior,
) -> Result<SoftLabelMatrix> {
    combine_rows(&batch_d.rows, &batch_l.rows, prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_cancels() {
        let prior = ClassPrior::new(vec![0.2, 0.3, 0.5]).unwrap();
        let p = [0.1, 0.6, 0.3];
        let c = combine(&p, prior.probs(), &prior);
        for k in 0..3 {
            assert!((c.probs[k] - p[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn worked_examples() {
        let u = ClassPrior::uniform(2);
        let c = combine(&[0.6, 0.4], &[0.7, 0.3], &u);
        assert!((c.probs[0] - 0.84 / 1.08).abs() < 1e-12);
        assert!((c.probs[0] - 0.7778).abs() < 1e-4);
        let c = combine(&[0.9, 0.1], &[0.2, 0.8], &u);
        assert!((c.probs[0] - 0.18 / 0.26).abs() < 1e-12);
        assert!((c.probs[1] - 0.3077).abs() < 1e-4);
    }

    #[test]
    fn disjoint_support_falls_back() {
        let c = combine(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &ClassPrior::uniform(3));
        assert!(c.degenerate);
        assert_eq!(c.probs, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn batch_examples() {
        let u = ClassPrior::uniform(3);
        let uni = SoftLabelMatrix::uniform(4, 3);
        let d = PredictionBatch::new(uni.clone(), Source::DataClassifier, true);
        let l = PredictionBatch::new(uni.clone(), Source::LabelAggregator, false);
        let out = combine_batch(&d, &l, &u, false).unwrap();
        for r in out.iter_rows() {
            assert!(r.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
        let hot = SoftLabelMatrix::one_hot(&[0, 2, 1], 3);
        let d = PredictionBatch::new(hot.clone(), Source::DataClassifier, true);
        let l = PredictionBatch::new(hot.clone(), Source::LabelAggregator, true);
        let out = combine_batch(&d, &l, &u, true).unwrap();
        assert_eq!(out.hard_labels(), vec![0, 2, 1]);
        assert!(out.row(0)[0] > 1.0 - 1e-9);
    }

    #[test]
    fn calibration_precondition() {
        let u = ClassPrior::uniform(2);
        let rows = SoftLabelMatrix::uniform(2, 2);
        let raw_d = PredictionBatch::new(rows.clone(), Source::DataClassifier, false);
        let l = PredictionBatch::new(rows.clone(), Source::LabelAggregator, false);
        assert!(matches!(combine_batch(&raw_d, &l, &u, false), Err(Error::Uncalibrated(_))));
        let d = PredictionBatch::new(rows.clone(), Source::DataClassifier, true);
        assert!(combine_batch(&d, &l, &u, false).is_ok());
        assert!(matches!(combine_batch(&d, &l, &u, true), Err(Error::Uncalibrated(_))));
        assert!(combine_batch_uncalibrated(&raw_d, &l, &u).is_ok());
    }
}
