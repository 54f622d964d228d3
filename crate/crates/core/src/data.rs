//! Dataset types, validation and class-prior estimation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};

/// Row-sum tolerance for probability vectors.
pub const STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: usize,
}

/// `n x m` noisy labels; `None` marks an annotator that did not label the instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    n: usize,
    m: usize,
    cells: Vec<Option<usize>>,
}

impl AnnotationMatrix {
    pub fn new(n: usize, m: usize, cells: Vec<Option<usize>>) -> Result<Self> {
        if cells.len() != n * m {
            return Err(Error::Shape(format!("{} cells for a {n}x{m} annotation matrix", cells.len())));
        }
        Ok(AnnotationMatrix { n, m, cells })
    }

    pub fn from_rows(rows: Vec<Vec<Option<usize>>>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let mut cells = Vec::with_capacity(n * m);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != m {
                return Err(Error::Shape(format!("annotation row {i} has {} cells, expected {m}", r.len())));
            }
            cells.extend(r);
        }
        Ok(AnnotationMatrix { n, m, cells })
    }

    /// Builds an `n x m` matrix from per-annotator columns.
    pub fn from_columns(columns: &[Vec<Option<usize>>]) -> Result<Self> {
        let m = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().position(|c| c.len() != n) {
            return Err(Error::Shape(format!("annotator column {bad} has the wrong length")));
        }
        let mut cells = Vec::with_capacity(n * m);
        for i in 0..n {
            cells.extend(columns.iter().map(|c| c[i]));
        }
        Ok(AnnotationMatrix { n, m, cells })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<usize> {
        self.cells[i * self.m + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[Option<usize>] {
        &self.cells[i * self.m..(i + 1) * self.m]
    }

    pub fn column(&self, j: usize) -> Vec<Option<usize>> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[Option<usize>]> {
        (0..self.n).map(move |i| self.row(i))
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(Option::is_some)
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> AnnotationMatrix {
        let mut cells = Vec::with_capacity(idx.len() * self.m);
        for &i in idx {
            cells.extend_from_slice(self.row(i));
        }
        AnnotationMatrix { n: idx.len(), m: self.m, cells }
    }
}

/// `n x C` row-stochastic matrix of co-labels or predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelMatrix(Matrix);

impl SoftLabelMatrix {
    /// Wraps `m` after checking every row is a distribution.
    pub fn new(m: Matrix) -> Result<Self> {
        for (i, row) in m.iter_rows().enumerate() {
            check_distribution(row).map_err(|e| Error::InvalidInput(format!("row {i}: {e}")))?;
        }
        Ok(SoftLabelMatrix(m))
    }

    pub fn from_rows(rows: &[Vec<f64>], classes: usize) -> Result<Self> {
        Self::new(Matrix::from_rows(rows, classes)?)
    }

    pub fn one_hot(labels: &[usize], classes: usize) -> Self {
        let mut m = Matrix::zeros(labels.len(), classes);
        for (i, &y) in labels.iter().enumerate() {
            m.set(i, y, 1.0);
        }
        SoftLabelMatrix(m)
    }

    pub fn uniform(n: usize, classes: usize) -> Self {
        SoftLabelMatrix(Matrix::from_vec(n, classes, vec![1.0 / classes as f64; n * classes]).expect("shape"))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.0.iter_rows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn hard_labels(&self) -> Vec<usize> {
        self.iter_rows().map(argmax).collect()
    }

    /// Fraction of rows whose argmax equals `truth`.
    pub fn accuracy(&self, truth: &[usize]) -> f64 {
        accuracy(&self.hard_labels(), truth)
    }

    pub fn select_rows(&self, idx: &[usize]) -> SoftLabelMatrix {
        SoftLabelMatrix(self.0.select_rows(idx))
    }
}

pub fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("entry {bad} outside [0,1]"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / pred.len() as f64
}

/// Class prior `q`, estimated from trusted labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    probs: Vec<f64>,
}

impl ClassPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("class prior {probs:?} is not a positive distribution")));
        }
        Ok(ClassPrior { probs })
    }

    pub fn uniform(classes: usize) -> Self {
        ClassPrior { probs: vec![1.0 / classes as f64; classes] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    /// Additively smoothed label frequencies: `(count_k + alpha) / (u + alpha * C)`.
    ///
    /// With `alpha = 0` a class absent from the trusted set gets probability zero,
    /// which the combination rule cannot divide by; such priors are rejected.
    pub fn estimate(labels: &[usize], classes: usize, alpha: f64) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("trusted set"));
        }
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("prior smoothing {alpha} must be >= 0")));
        }
        let mut counts = vec![0.0; classes];
        for &y in labels {
            if y >= classes {
                return Err(Error::InvalidInput(format!("label {y} >= class count {classes}")));
            }
            counts[y] += 1.0;
        }
        let denom = labels.len() as f64 + alpha * classes as f64;
        let probs: Vec<f64> = counts.iter().map(|c| (c + alpha) / denom).collect();
        if probs.contains(&0.0) {
            return Err(Error::InvalidInput(
                "a class has no trusted examples; use a positive prior smoothing".into(),
            ));
        }
        Ok(ClassPrior { probs })
    }
}

/// Class prior from a trusted set.
pub fn estimate_class_prior(trusted: &TrustedDataset, classes: usize, alpha: f64) -> Result<ClassPrior> {
    ClassPrior::estimate(&trusted.labels(), classes, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UntrustedDataset {
    pub ids: Vec<String>,
    pub features: Matrix,
    pub annotations: AnnotationMatrix,
    /// Hidden ground truth, present only for simulated data.
    pub truth: Option<Vec<usize>>,
}

impl UntrustedDataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Small clean set; `annotations` is required by the complete-data variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustedDataset {
    pub examples: Vec<LabeledExample>,
    pub annotations: Option<AnnotationMatrix>,
}

impl TrustedDataset {
    pub fn new(examples: Vec<LabeledExample>, annotations: Option<AnnotationMatrix>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty("trusted set"));
        }
        if let Some(a) = &annotations {
            if a.n() != examples.len() {
                return Err(Error::Shape(format!(
                    "trusted set has {} examples but {} annotation rows",
                    examples.len(),
                    a.n()
                )));
            }
        }
        Ok(TrustedDataset { examples, annotations })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.id.clone()).collect()
    }

    pub fn features(&self) -> Matrix {
        let d = self.examples.first().map_or(0, |e| e.features.len());
        let rows: Vec<Vec<f64>> = self.examples.iter().map(|e| e.features.clone()).collect();
        Matrix::from_rows(&rows, d).expect("trusted feature rows share a dimension")
    }

    /// The first `k` examples (with their annotations, if any).
    pub fn take(&self, k: usize) -> Result<TrustedDataset> {
        let k = k.min(self.len());
        let idx: Vec<usize> = (0..k).collect();
        TrustedDataset::new(
            self.examples[..k].to_vec(),
            self.annotations.as_ref().map(|a| a.select_rows(&idx)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    RowCountMismatch { features: usize, annotations: usize },
    FeatureDimension { set: &'static str, index: usize, found: usize, expected: usize },
    AllMissingRow { set: &'static str, index: usize },
    EmptyAnnotatorColumn(usize),
    LabelOutOfRange { set: &'static str, index: usize, label: usize },
    AnnotatorCountMismatch { untrusted: usize, trusted: usize },
    TrustedEmpty,
    TrustedAnnotationRows { examples: usize, annotations: usize },
    TruthLength { truth: usize, rows: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowCountMismatch { features, annotations } => {
                write!(f, "row count mismatch: {features} feature rows vs {annotations} annotation rows")
            }
            Violation::FeatureDimension { set, index, found, expected } => {
                write!(f, "{set} row {index} has dimension {found}, expected {expected}")
            }
            Violation::AllMissingRow { set, index } => write!(f, "all-missing row at index {index} ({set})"),
            Violation::EmptyAnnotatorColumn(j) => write!(f, "annotator {j} labels no instance"),
            Violation::LabelOutOfRange { set, index, label } => {
                write!(f, "{set} row {index} has label {label} outside the class range")
            }
            Violation::AnnotatorCountMismatch { untrusted, trusted } => {
                write!(f, "untrusted data has {untrusted} annotators, trusted data {trusted}")
            }
            Violation::TrustedEmpty => write!(f, "trusted set is empty"),
            Violation::TrustedAnnotationRows { examples, annotations } => {
                write!(f, "trusted set has {examples} examples but {annotations} annotation rows")
            }
            Violation::TruthLength { truth, rows } => write!(f, "truth has {truth} labels for {rows} rows"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_annotations(set: &'static str, a: &AnnotationMatrix, classes: usize, out: &mut Vec<Violation>) {
    for (i, row) in a.iter_rows().enumerate() {
        if row.iter().all(Option::is_none) {
            out.push(Violation::AllMissingRow { set, index: i });
        }
        for label in row.iter().flatten() {
            if *label >= classes {
                out.push(Violation::LabelOutOfRange { set, index: i, label: *label });
            }
        }
    }
}

/// Collects every invariant violation; an empty report means the data is usable.
pub fn validate_dataset(untrusted: &UntrustedDataset, trusted: &TrustedDataset, classes: usize) -> ValidationReport {
    let mut v = Vec::new();
    let d = untrusted.dim();
    let ann = &untrusted.annotations;
    if untrusted.features.rows() != ann.n() {
        v.push(Violation::RowCountMismatch { features: untrusted.features.rows(), annotations: ann.n() });
    }
    if let Some(t) = &untrusted.truth {
        if t.len() != untrusted.features.rows() {
            v.push(Violation::TruthLength { truth: t.len(), rows: untrusted.features.rows() });
        }
        for (i, &y) in t.iter().enumerate() {
            if y >= classes {
                v.push(Violation::LabelOutOfRange { set: "truth", index: i, label: y });
            }
        }
    }
    check_annotations("untrusted", ann, classes, &mut v);
    for j in 0..ann.m() {
        if ann.n() > 0 && (0..ann.n()).all(|i| ann.get(i, j).is_none()) {
            v.push(Violation::EmptyAnnotatorColumn(j));
        }
    }

    if trusted.examples.is_empty() {
        v.push(Violation::TrustedEmpty);
    }
    for (i, e) in trusted.examples.iter().enumerate() {
        if e.features.len() != d {
            v.push(Violation::FeatureDimension { set: "trusted", index: i, found: e.features.len(), expected: d });
        }
        if e.label >= classes {
            v.push(Violation::LabelOutOfRange { set: "trusted", index: i, label: e.label });
        }
    }
    if let Some(ta) = &trusted.annotations {
        if ta.n() != trusted.examples.len() {
            v.push(Violation::TrustedAnnotationRows { examples: trusted.examples.len(), annotations: ta.n() });
        }
        if ta.m() != ann.m() {
            v.push(Violation::AnnotatorCountMismatch { untrusted: ann.m(), trusted: ta.m() });
        }
        check_annotations("trusted", ta, classes, &mut v);
    }
    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (UntrustedDataset, TrustedDataset) {
        let features = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], 2).unwrap();
        let annotations = AnnotationMatrix::from_rows(vec![vec![Some(0), None], vec![Some(1), Some(1)]]).unwrap();
        let untrusted =
            UntrustedDataset { ids: vec!["a".into(), "b".into()], features, annotations, truth: Some(vec![0, 1]) };
        let trusted = TrustedDataset::new(
            vec![LabeledExample { id: "t".into(), features: vec![0.5, 0.5], label: 1 }],
            None,
        )
        .unwrap();
        (untrusted, trusted)
    }

    #[test]
    fn consistent_dataset_is_valid() {
        let (u, t) = tiny();
        assert!(validate_dataset(&u, &t, 2).is_valid());
    }

    #[test]
    fn all_missing_row_reported() {
        let (mut u, t) = tiny();
        u.annotations = AnnotationMatrix::from_rows(vec![vec![Some(0), Some(1)], vec![None, None]]).unwrap();
        let report = validate_dataset(&u, &t, 2);
        assert_eq!(report.violations, vec![Violation::AllMissingRow { set: "untrusted", index: 1 }]);
        assert!(report.to_string().contains("all-missing row at index 1"));
    }

    #[test]
    fn row_count_mismatch_reported() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let features = Matrix::from_rows(&rows, 1).unwrap();
        let annotations = AnnotationMatrix::from_rows(vec![vec![Some(0)]; 9]).unwrap();
        let u = UntrustedDataset { ids: (0..10).map(|i| i.to_string()).collect(), features, annotations, truth: None };
        let t = TrustedDataset::new(vec![LabeledExample { id: "t".into(), features: vec![0.0], label: 0 }], None)
            .unwrap();
        let report = validate_dataset(&u, &t, 2);
        assert!(report.to_string().contains("row count mismatch"));
    }

    #[test]
    fn label_out_of_range_and_empty_column() {
        let (mut u, t) = tiny();
        u.annotations = AnnotationMatrix::from_rows(vec![vec![Some(5), None], vec![Some(1), None]]).unwrap();
        let report = validate_dataset(&u, &t, 2);
        assert!(report.violations.contains(&Violation::LabelOutOfRange { set: "untrusted", index: 0, label: 5 }));
        assert!(report.violations.contains(&Violation::EmptyAnnotatorColumn(1)));
    }

    #[test]
    fn prior_examples() {
        let p = ClassPrior::estimate(&[0, 0, 1, 1], 2, 0.0).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
        let p = ClassPrior::estimate(&[0, 0, 0, 1], 2, 0.0).unwrap();
        assert_eq!(p.probs(), &[0.75, 0.25]);
        let p = ClassPrior::estimate(&[0, 0], 2, 1.0).unwrap();
        assert_eq!(p.probs(), &[0.75, 0.25]);
        assert!(matches!(ClassPrior::estimate(&[], 2, 1.0), Err(Error::Empty(_))));
        assert!(ClassPrior::estimate(&[0, 0], 2, 0.0).is_err());
    }

    #[test]
    fn soft_label_checks() {
        assert!(SoftLabelMatrix::from_rows(&[vec![0.5, 0.5]], 2).is_ok());
        assert!(SoftLabelMatrix::from_rows(&[vec![0.5, 0.6]], 2).is_err());
        assert!(SoftLabelMatrix::from_rows(&[vec![1.5, -0.5]], 2).is_err());
        let s = SoftLabelMatrix::one_hot(&[1, 0], 2);
        assert_eq!(s.accuracy(&[1, 1]), 0.5);
    }

    #[test]
    fn trusted_shape_checked() {
        let ex = vec![LabeledExample { id: "a".into(), features: vec![], label: 0 }];
        let ann = AnnotationMatrix::from_rows(vec![vec![Some(0)], vec![Some(0)]]).unwrap();
        assert!(TrustedDataset::new(ex, Some(ann)).is_err());
        assert!(TrustedDataset::new(vec![], None).is_err());
    }

    proptest::proptest! {
        #[test]
        fn smoothed_prior_is_positive(labels in proptest::collection::vec(0usize..4, 1..50), alpha in 0.01f64..5.0) {
            let p = ClassPrior::estimate(&labels, 4, alpha).unwrap();
            proptest::prop_assert!(p.probs().iter().all(|&x| x > 0.0));
            proptest::prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
