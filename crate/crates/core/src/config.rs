//! Experiment configuration (JSON) and the synthetic blob datasets.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledExample, TrustedDataset, UntrustedDataset};
use crate::error::{Error, Result};
use crate::io::{Dataset, DatasetPaths};
use crate::matrix::Matrix;
use crate::noise::{generate_group, AnnotatorGroupSpec};
use crate::rng::Seed;
use crate::trainer::{ColabelInit, RetrainMode, TrainConfig};

/// Isotropic Gaussian blobs. The `C * clusters_per_class` centers sit evenly
/// on a circle of radius `separation` in the first two feature dimensions,
/// with center `i` belonging to class `i % C`, so neighboring blobs carry
/// different classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobGeometry {
    pub separation: f64,
    pub spread: f64,
    pub clusters_per_class: usize,
}

impl Default for BlobGeometry {
    fn default() -> Self {
        BlobGeometry { separation: 2.0, spread: 1.0, clusters_per_class: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub classes: usize,
    pub dim: usize,
    /// Untrusted instances.
    pub n: usize,
    /// Trusted instances, class-balanced.
    pub trusted: usize,
    #[serde(default)]
    pub validation: usize,
    #[serde(default)]
    pub geometry: BlobGeometry,
    pub annotators: AnnotatorGroupSpec,
    /// Also annotate the trusted and validation rows (needed by TCLS).
    #[serde(default = "yes")]
    pub annotate_trusted: bool,
}

fn yes() -> bool {
    true
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n == 0 || self.trusted == 0 {
            return Err(Error::Config("simulation needs dim, n and trusted size above zero".into()));
        }
        let g = &self.geometry;
        if !(g.spread > 0.0) || !g.separation.is_finite() || g.clusters_per_class == 0 {
            return Err(Error::Config("blob spread must be positive, separation finite, clusters nonzero".into()));
        }
        self.annotators.validate(self.classes)
    }

    /// Row `i` is the center of blob `i`, which belongs to class `i % C`.
    pub fn centers(&self) -> Matrix {
        let total = self.classes * self.geometry.clusters_per_class;
        let mut c = Matrix::zeros(total, self.dim);
        for k in 0..total {
            if self.dim == 1 {
                c.set(k, 0, self.geometry.separation * k as f64);
            } else {
                let angle = 2.0 * std::f64::consts::PI * k as f64 / total as f64;
                c.set(k, 0, self.geometry.separation * angle.cos());
                c.set(k, 1, self.geometry.separation * angle.sin());
            }
        }
        c
    }

    fn draw_features(&self, labels: &[usize], rng: &mut impl Rng) -> Matrix {
        let centers = self.centers();
        let per_class = self.geometry.clusters_per_class;
        let noise = Normal::new(0.0, self.geometry.spread).expect("spread validated");
        let mut m = Matrix::zeros(labels.len(), self.dim);
        for (i, &y) in labels.iter().enumerate() {
            let blob = y + self.classes * if per_class > 1 { rng.gen_range(0..per_class) } else { 0 };
            for (x, c) in m.row_mut(i).iter_mut().zip(centers.row(blob)) {
                *x = c + noise.sample(rng);
            }
        }
        m
    }
}

/// Draws a full dataset: uniformly random untrusted and validation labels,
/// class-balanced trusted labels.
pub fn simulate(sim: &SimulationConfig, seed: Seed) -> Result<Dataset> {
    sim.validate()?;
    let c = sim.classes;
    let mut label_rng = seed.stream("labels");
    let truth: Vec<usize> = (0..sim.n).map(|_| label_rng.gen_range(0..c)).collect();
    let trusted_labels: Vec<usize> = (0..sim.trusted).map(|i| i % c).collect();
    let validation_labels: Vec<usize> = (0..sim.validation).map(|_| label_rng.gen_range(0..c)).collect();

    let mut feat_rng = seed.stream("features");
    let features = sim.draw_features(&truth, &mut feat_rng);
    let trusted_features = sim.draw_features(&trusted_labels, &mut feat_rng);
    let validation_features = sim.draw_features(&validation_labels, &mut feat_rng);

    let annotations = generate_group(&truth, &sim.annotators, c, &mut seed.stream("annotations"))?;
    let side_annotations = |labels: &[usize], label: &str| -> Result<_> {
        if sim.annotate_trusted && !labels.is_empty() {
            Ok(Some(generate_group(labels, &sim.annotators, c, &mut seed.stream(label))?))
        } else {
            Ok(None)
        }
    };
    let labeled = |prefix: &str, labels: &[usize], features: &Matrix| -> Vec<LabeledExample> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| LabeledExample { id: format!("{prefix}{i}"), features: features.row(i).to_vec(), label })
            .collect()
    };

    let trusted = TrustedDataset::new(
        labeled("t", &trusted_labels, &trusted_features),
        side_annotations(&trusted_labels, "trusted-annotations")?,
    )?;
    let validation = if sim.validation > 0 {
        Some(TrustedDataset::new(
            labeled("v", &validation_labels, &validation_features),
            side_annotations(&validation_labels, "validation-annotations")?,
        )?)
    } else {
        None
    };
    Ok(Dataset {
        untrusted: UntrustedDataset { ids: (0..sim.n).map(|i| format!("u{i}")).collect(), features, annotations, truth: Some(truth) },
        trusted,
        validation,
    })
}

/// Axes swept by the `ablate` command; empty lists are not swept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub calibration: Vec<bool>,
    pub trusted_sizes: Vec<usize>,
    pub retrain: Vec<RetrainMode>,
    pub colabel_init: Vec<ColabelInit>,
}

impl AblationConfig {
    pub fn is_empty(&self) -> bool {
        self.calibration.is_empty() && self.trusted_sizes.is_empty() && self.retrain.is_empty() && self.colabel_init.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Dataset files; mutually exclusive with `simulation`.
    pub data: Option<DatasetPaths>,
    /// Number of classes when reading dataset files.
    pub classes: Option<usize>,
    pub simulation: Option<SimulationConfig>,
    pub train: TrainConfig,
    pub output: Option<PathBuf>,
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.simulation) {
            (Some(_), None) => {
                if self.classes.is_none_or(|c| c < 2) {
                    return Err(Error::Config("dataset files need \"classes\" of at least 2".into()));
                }
            }
            (None, Some(sim)) => sim.validate()?,
            _ => return Err(Error::Config("exactly one of \"data\" or \"simulation\" must be given".into())),
        }
        self.train.validate()
    }

    pub fn class_count(&self) -> usize {
        self.simulation.as_ref().map(|s| s.classes).or(self.classes).unwrap_or(0)
    }

    /// Reads or simulates the dataset.
    pub fn dataset(&self) -> Result<Dataset> {
        self.validate()?;
        match (&self.data, &self.simulation) {
            (Some(paths), None) => crate::io::read_dataset(paths),
            (None, Some(sim)) => simulate(sim, Seed(self.train.seed)),
            _ => unreachable!("validated above"),
        }
    }
}
