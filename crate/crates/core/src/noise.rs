//! Synthetic annotators: independent flipping noise (symmetric, pair,
//! class-wise) and annotators correlated with an earlier one (imitative,
//! supportive, opposite).

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::AnnotationMatrix;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Stream;

/// One annotator behavior. `base` of a correlated kind is the index of an
/// earlier entry in [`AnnotatorGroupSpec::specs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Symmetric { eps: f64 },
    Pair { eps: f64 },
    #[serde(rename = "classwise")]
    ClassWise { correct_classes: Vec<usize> },
    Imitative { base: usize },
    Supportive { base: usize },
    Opposite { base: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationKind {
    Imitative,
    Supportive,
    Opposite,
}

impl NoiseSpec {
    pub fn correlation(&self) -> Option<(CorrelationKind, usize)> {
        match *self {
            NoiseSpec::Imitative { base } => Some((CorrelationKind::Imitative, base)),
            NoiseSpec::Supportive { base } => Some((CorrelationKind::Supportive, base)),
            NoiseSpec::Opposite { base } => Some((CorrelationKind::Opposite, base)),
            _ => None,
        }
    }

    /// Generating confusion matrix for the independent kinds.
    pub fn confusion(&self, classes: usize) -> Result<Option<Matrix>> {
        Ok(match self {
            NoiseSpec::Symmetric { eps } => Some(build_confusion_symmetric(classes, *eps)?),
            NoiseSpec::Pair { eps } => Some(build_confusion_pair(classes, *eps)?),
            NoiseSpec::ClassWise { correct_classes } => Some(build_confusion_classwise(classes, correct_classes)?),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelsPerInstance {
    All,
    Count(usize),
}

/// A group of simulated annotators. Entry `s` of `specs` is replicated
/// `annotators_per_spec` times; replica `r` of a correlated entry follows
/// replica `r` of its base entry. Annotator columns are ordered spec-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorGroupSpec {
    pub specs: Vec<NoiseSpec>,
    pub labels_per_instance: LabelsPerInstance,
    #[serde(default = "one")]
    pub annotators_per_spec: usize,
}

fn one() -> usize {
    1
}

impl AnnotatorGroupSpec {
    pub fn annotator_count(&self) -> usize {
        self.specs.len() * self.annotators_per_spec
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.specs.is_empty() || self.annotators_per_spec == 0 {
            return Err(Error::Config("annotator group has no annotators".into()));
        }
        for (i, s) in self.specs.iter().enumerate() {
            match s {
                NoiseSpec::Symmetric { eps } | NoiseSpec::Pair { eps } if !(0.0..=1.0).contains(eps) => {
                    return Err(Error::Config(format!("spec {i}: eps {eps} outside [0,1]")));
                }
                NoiseSpec::ClassWise { correct_classes } => {
                    build_confusion_classwise(classes, correct_classes)?;
                }
                _ => {}
            }
            if let Some((_, base)) = s.correlation() {
                if base >= i {
                    return Err(Error::Config(format!("spec {i} references spec {base}, which is not earlier")));
                }
            }
        }
        if let LabelsPerInstance::Count(k) = self.labels_per_instance {
            if k == 0 || k > self.annotator_count() {
                return Err(Error::Config(format!(
                    "{k} labels per instance with {} annotators",
                    self.annotator_count()
                )));
            }
        }
        if classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        Ok(())
    }

    /// Generating confusion matrix per annotator column (`None` for correlated ones).
    pub fn confusions(&self, classes: usize) -> Result<Vec<Option<Matrix>>> {
        let mut out = Vec::with_capacity(self.annotator_count());
        for s in &self.specs {
            let c = s.confusion(classes)?;
            out.extend(std::iter::repeat_n(c, self.annotators_per_spec));
        }
        Ok(out)
    }
}

fn require_classes(classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::InvalidInput(format!("{classes} classes; at least two are required")));
    }
    Ok(())
}

fn require_eps(eps: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::InvalidInput(format!("flip probability {eps} outside [0,1]")));
    }
    Ok(())
}

/// Diagonal `1 - eps`, every off-diagonal `eps / (C - 1)`.
pub fn build_confusion_symmetric(classes: usize, eps: f64) -> Result<Matrix> {
    require_classes(classes)?;
    require_eps(eps)?;
    let off = eps / (classes - 1) as f64;
    let mut m = Matrix::zeros(classes, classes);
    for k in 0..classes {
        for s in 0..classes {
            m.set(k, s, if k == s { 1.0 - eps } else { off });
        }
    }
    Ok(m)
}

/// Class `k` flips to `(k + 1) mod C` with probability `eps`.
pub fn build_confusion_pair(classes: usize, eps: f64) -> Result<Matrix> {
    require_classes(classes)?;
    require_eps(eps)?;
    let mut m = Matrix::zeros(classes, classes);
    for k in 0..classes {
        m.set(k, k, 1.0 - eps);
        let next = (k + 1) % classes;
        m.set(k, next, m.get(k, next) + eps);
    }
    Ok(m)
}

/// Identity rows for `correct`, uniform rows (true class included) elsewhere.
pub fn build_confusion_classwise(classes: usize, correct: &[usize]) -> Result<Matrix> {
    require_classes(classes)?;
    if correct.is_empty() {
        return Err(Error::InvalidInput("class-wise annotator needs at least one correct class".into()));
    }
    if let Some(bad) = correct.iter().find(|&&k| k >= classes) {
        return Err(Error::InvalidInput(format!("correct class {bad} >= {classes}")));
    }
    let uniform = 1.0 / classes as f64;
    let mut m = Matrix::from_vec(classes, classes, vec![uniform; classes * classes])?;
    for &k in correct {
        m.row_mut(k).fill(0.0);
        m.set(k, k, 1.0);
    }
    Ok(m)
}

fn draw_from_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    // rounding left u above the last partial sum; take the last class with mass
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Draws one noisy label per instance from the confusion row of its true class.
pub fn sample_independent_labels(truth: &[usize], confusion: &Matrix, rng: &mut Stream) -> Vec<usize> {
    truth.iter().map(|&y| draw_from_row(confusion.row(y), rng)).collect()
}

fn wrong_label<R: Rng + ?Sized>(truth: usize, classes: usize, rng: &mut R) -> usize {
    let r = rng.gen_range(0..classes - 1);
    if r >= truth {
        r + 1
    } else {
        r
    }
}

/// Labels that depend on a base annotator's labels.
pub fn sample_correlated_labels(
    truth: &[usize],
    base: &[usize],
    kind: CorrelationKind,
    classes: usize,
    rng: &mut Stream,
) -> Result<Vec<usize>> {
    require_classes(classes)?;
    if truth.len() != base.len() {
        return Err(Error::Shape(format!("{} truths vs {} base labels", truth.len(), base.len())));
    }
    Ok(truth
        .iter()
        .zip(base)
        .map(|(&y, &b)| match kind {
            CorrelationKind::Imitative => b,
            CorrelationKind::Supportive if b == y => y,
            CorrelationKind::Opposite if b != y => y,
            _ => wrong_label(y, classes, rng),
        })
        .collect())
}

/// Full label columns for every annotator of the group, before masking.
pub fn generate_full_columns(
    truth: &[usize],
    spec: &AnnotatorGroupSpec,
    classes: usize,
    rng: &mut Stream,
) -> Result<Vec<Vec<usize>>> {
    spec.validate(classes)?;
    let reps = spec.annotators_per_spec;
    let mut columns: Vec<Vec<usize>> = Vec::with_capacity(spec.annotator_count());
    for s in &spec.specs {
        for r in 0..reps {
            let col = match s.correlation() {
                Some((kind, base)) => {
                    let base_col = columns[base * reps + r].clone();
                    sample_correlated_labels(truth, &base_col, kind, classes, rng)?
                }
                None => {
                    let confusion = s.confusion(classes)?.expect("independent spec");
                    sample_independent_labels(truth, &confusion, rng)
                }
            };
            columns.push(col);
        }
    }
    Ok(columns)
}

/// Annotation matrix for `truth`. In sparse mode each instance keeps labels
/// from `k` distinct annotators chosen uniformly without replacement.
pub fn generate_group(
    truth: &[usize],
    spec: &AnnotatorGroupSpec,
    classes: usize,
    rng: &mut Stream,
) -> Result<AnnotationMatrix> {
    let columns = generate_full_columns(truth, spec, classes, rng)?;
    let m = columns.len();
    let n = truth.len();
    let mut cells: Vec<Option<usize>> = Vec::with_capacity(n * m);
    match spec.labels_per_instance {
        LabelsPerInstance::All => {
            for i in 0..n {
                cells.extend(columns.iter().map(|c| Some(c[i])));
            }
        }
        LabelsPerInstance::Count(k) => {
            for i in 0..n {
                let mut row = vec![None; m];
                for j in sample(rng, m, k) {
                    row[j] = Some(columns[j][i]);
                }
                cells.extend(row);
            }
        }
    }
    AnnotationMatrix::new(n, m, cells)
}

/// Row-normalized confusion counts of `labels` against `truth`; rows with
/// no instances are left at zero.
pub fn empirical_confusion(truth: &[usize], labels: &[Option<usize>], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(classes, classes);
    for (&y, l) in truth.iter().zip(labels) {
        if let Some(s) = l {
            m.set(y, *s, m.get(y, *s) + 1.0);
        }
    }
    for k in 0..classes {
        let total: f64 = m.row(k).iter().sum();
        if total > 0.0 {
            m.row_mut(k).iter_mut().for_each(|v| *v /= total);
        }
    }
    m
}

/// Accuracy of each annotator on the instances it labeled (NaN if none).
pub fn annotator_accuracy(truth: &[usize], annotations: &AnnotationMatrix) -> Vec<f64> {
    (0..annotations.m())
        .map(|j| {
            let (mut hit, mut seen) = (0usize, 0usize);
            for (i, &y) in truth.iter().enumerate() {
                if let Some(s) = annotations.get(i, j) {
                    seen += 1;
                    hit += usize::from(s == y);
                }
            }
            if seen == 0 {
                f64::NAN
            } else {
                hit as f64 / seen as f64
            }
        })
        .collect()
}
