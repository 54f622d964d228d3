//! Alternating co-label training (sparse and complete-data variants), the
//! retraining stage, and the majority-vote baselines.

use std::io::Write;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::aggregator::{
    self, fit_nb_confusions, init_colabels_trusted_nb, majority_vote, nb_loss, nb_posteriors, ConfusionMatrixSet,
    NeuralAggregatorParams,
};
use crate::calibration::{self, fit_multiclass_calibrator, CalibrationMap};
use crate::classifier::{self, init_classifier, predict_proba, ClassifierParams};
use crate::combiner::{combine_batch, combine_batch_uncalibrated, PredictionBatch, Source};
use crate::data::{AnnotationMatrix, ClassPrior, SoftLabelMatrix, TrustedDataset, UntrustedDataset};
use crate::error::{Error, Result};
use crate::nn::{Optimizer, OptimizerConfig};
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Naive-Bayes aggregator; tolerates missing annotations.
    Tcl,
    /// Neural aggregator; requires complete annotations.
    Tcls,
    /// Classifier trained on hard majority votes.
    DlMv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrainMode {
    /// Untrusted rows with co-labels plus trusted rows with clean labels.
    Full,
    /// Untrusted rows with co-labels only.
    NoisyOnly,
    /// Keep the classifier from the alternating stage.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColabelInit {
    Mv,
    TrustedNb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub variant: Variant,
    pub classifier_hidden: Vec<usize>,
    pub classifier_opt: OptimizerConfig,
    pub epochs_per_iteration: usize,
    /// Overrides `epochs_per_iteration` in the first round.
    pub first_iteration_epochs: Option<usize>,
    pub retrain: RetrainMode,
    pub retrain_epochs: usize,
    /// Defaults to `classifier_opt`.
    pub retrain_opt: Option<OptimizerConfig>,
    /// Per-sample weight of trusted rows during full retraining.
    pub trusted_weight: f64,
    pub aggregator_hidden: Vec<usize>,
    pub aggregator_opt: OptimizerConfig,
    pub aggregator_epochs: usize,
    pub calibration: bool,
    /// Calibrate the aggregator view too; defaults to off for TCL, on for TCLS.
    pub calibrate_aggregator: Option<bool>,
    /// Defaults to majority vote for TCL, trusted Naive Bayes for TCLS.
    pub colabel_init: Option<ColabelInit>,
    pub bins: usize,
    pub prior_alpha: f64,
    pub confusion_alpha: f64,
    pub baseline_epochs: usize,
    pub finetune: bool,
    pub finetune_opt: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 10,
            variant: Variant::Tcl,
            classifier_hidden: vec![32],
            classifier_opt: OptimizerConfig { step_size: 0.05, ..Default::default() },
            epochs_per_iteration: 1,
            first_iteration_epochs: None,
            retrain: RetrainMode::Full,
            retrain_epochs: 20,
            retrain_opt: None,
            trusted_weight: 1.0,
            aggregator_hidden: vec![64, 32],
            aggregator_opt: OptimizerConfig::adam(0.001),
            aggregator_epochs: 3,
            calibration: true,
            calibrate_aggregator: None,
            colabel_init: None,
            bins: calibration::DEFAULT_BINS,
            prior_alpha: 1.0,
            confusion_alpha: 0.01,
            baseline_epochs: 20,
            finetune: false,
            finetune_opt: OptimizerConfig { step_size: 0.01, epochs: 20, batch_size: 32, ..Default::default() },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.bins == 0 {
            return Err(Error::Config("calibration bins must be at least 1".into()));
        }
        if !(self.trusted_weight >= 0.0) || self.prior_alpha < 0.0 || self.confusion_alpha < 0.0 {
            return Err(Error::Config("weights and smoothing must be non-negative".into()));
        }
        self.classifier_opt.validate()?;
        self.aggregator_opt.validate()?;
        self.finetune_opt.validate()?;
        if let Some(o) = &self.retrain_opt {
            o.validate()?;
        }
        Ok(())
    }

    fn seed(&self) -> Seed {
        Seed(self.seed)
    }

    fn epochs_for(&self, iter: usize) -> usize {
        match (iter, self.first_iteration_epochs) {
            (0, Some(e)) => e,
            _ => self.epochs_per_iteration,
        }
    }

    pub fn calibrates_aggregator(&self) -> bool {
        self.calibrate_aggregator.unwrap_or(self.variant == Variant::Tcls)
    }

    pub fn init_mode(&self) -> ColabelInit {
        self.colabel_init.unwrap_or(match self.variant {
            Variant::Tcls => ColabelInit::TrustedNb,
            _ => ColabelInit::Mv,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Co-label accuracy after the first combination of the round.
    pub colabel_acc_mid: Option<f64>,
    /// Co-label accuracy at the end of the round.
    pub colabel_acc: Option<f64>,
    pub clf_val_acc: Option<f64>,
    pub agg_val_acc: Option<f64>,
    pub ece_pre: Option<f64>,
    pub ece_post: Option<f64>,
    pub clf_loss: f64,
    pub agg_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_colabel_acc: Option<f64>,
    pub iterations: Vec<IterationRecord>,
    /// Number of co-label replacements performed.
    pub colabel_updates: usize,
}

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainHistory {
    pub const HEADER: [&'static str; 8] =
        ["iter", "colabel_acc", "clf_val_acc", "agg_val_acc", "ece_pre", "ece_post", "clf_loss", "agg_loss"];

    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::HEADER)?;
        for r in &self.iterations {
            w.write_record([
                r.iter.to_string(),
                opt_field(r.colabel_acc),
                opt_field(r.clf_val_acc),
                opt_field(r.agg_val_acc),
                opt_field(r.ece_pre),
                opt_field(r.ece_post),
                r.clf_loss.to_string(),
                r.agg_loss.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|e| Error::csv(path, e))
    }

    /// Reads `metrics.csv` back; mid-round accuracies are not stored there.
    pub fn read_csv(path: &Path) -> Result<TrainHistory> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut iterations = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let bad = |i: usize| Error::InvalidInput(format!("{}: bad metrics field {i}", path.display()));
            let opt = |i: usize| -> Result<Option<f64>> {
                match rec.get(i) {
                    Some("") => Ok(None),
                    Some(v) => v.parse().map(Some).map_err(|_| bad(i)),
                    None => Err(bad(i)),
                }
            };
            let req = |i: usize| -> Result<f64> { opt(i)?.ok_or_else(|| bad(i)) };
            iterations.push(IterationRecord {
                iter: rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| bad(0))?,
                colabel_acc_mid: None,
                colabel_acc: opt(1)?,
                clf_val_acc: opt(2)?,
                agg_val_acc: opt(3)?,
                ece_pre: opt(4)?,
                ece_post: opt(5)?,
                clf_loss: req(6)?,
                agg_loss: req(7)?,
            });
        }
        Ok(TrainHistory { initial_colabel_acc: None, iterations, colabel_updates: 0 })
    }
}

/// The label-aggregator view in its trained state.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregatorState {
    NaiveBayes(ConfusionMatrixSet),
    Neural(NeuralAggregatorParams),
}

impl AggregatorState {
    pub fn predict(&self, annotations: &AnnotationMatrix, prior: &ClassPrior) -> Result<SoftLabelMatrix> {
        match self {
            AggregatorState::NaiveBayes(c) => Ok(nb_posteriors(annotations, c, prior)?.0),
            AggregatorState::Neural(p) => aggregator::neural_aggregator_predict_all(p, annotations),
        }
    }

    pub fn confusions(&self) -> Option<&ConfusionMatrixSet> {
        match self {
            AggregatorState::NaiveBayes(c) => Some(c),
            AggregatorState::Neural(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final classifier (after retraining, unless retraining is off).
    pub classifier: ClassifierParams,
    /// Classifier at the end of the alternating stage.
    pub alternate_classifier: ClassifierParams,
    pub colabels: SoftLabelMatrix,
    pub aggregator: AggregatorState,
    pub prior: ClassPrior,
    pub history: TrainHistory,
    /// Calibrator fitted at the last combination, when calibration is on.
    pub calibrator: Option<CalibrationMap>,
}

struct Views<'a> {
    untrusted: &'a UntrustedDataset,
    trusted: &'a TrustedDataset,
    validation: Option<&'a TrustedDataset>,
    prior: ClassPrior,
    config: &'a TrainConfig,
    trusted_features: crate::matrix::Matrix,
    trusted_labels: Vec<usize>,
}

impl Views<'_> {
    fn colabel_acc(&self, colabels: &SoftLabelMatrix) -> Option<f64> {
        self.untrusted.truth.as_ref().map(|t| colabels.accuracy(t))
    }

    fn aggregator_trusted(&self) -> Result<&AnnotationMatrix> {
        self.trusted
            .annotations
            .as_ref()
            .ok_or_else(|| Error::Config("calibrating the aggregator needs trusted annotations".into()))
    }

    /// One prediction-combination phase.
    fn combine(
        &self,
        clf: &ClassifierParams,
        agg: &AggregatorState,
        agg_untrusted: &SoftLabelMatrix,
    ) -> Result<(SoftLabelMatrix, Option<CalibrationMap>)> {
        let raw = predict_proba(clf, &self.untrusted.features)?;
        let calibrate_agg = self.config.calibrates_aggregator();
        if !self.config.calibration {
            let d = PredictionBatch::new(raw, Source::DataClassifier, false);
            let l = PredictionBatch::new(agg_untrusted.clone(), Source::LabelAggregator, false);
            return Ok((combine_batch_uncalibrated(&d, &l, &self.prior)?, None));
        }
        let cal = fit_multiclass_calibrator(&predict_proba(clf, &self.trusted_features)?, &self.trusted_labels)?;
        let d = PredictionBatch::new(cal.calibrate(&raw)?, Source::DataClassifier, true);
        let l = if calibrate_agg {
            let agg_trusted = agg.predict(self.aggregator_trusted()?, &self.prior)?;
            let agg_cal = fit_multiclass_calibrator(&agg_trusted, &self.trusted_labels)?;
            PredictionBatch::new(agg_cal.calibrate(agg_untrusted)?, Source::LabelAggregator, true)
        } else {
            PredictionBatch::new(agg_untrusted.clone(), Source::LabelAggregator, false)
        };
        let require_both = self.config.variant == Variant::Tcls;
        Ok((combine_batch(&d, &l, &self.prior, require_both)?, Some(cal)))
    }

    fn validation_metrics(
        &self,
        clf: &ClassifierParams,
        agg: &AggregatorState,
        cal: Option<&CalibrationMap>,
    ) -> Result<(Option<f64>, Option<f64>, Option<f64>, Option<f64>)> {
        // held-out set when present, trusted set otherwise
        let (features, labels, annotations) = match self.validation {
            Some(v) => (v.features(), v.labels(), v.annotations.as_ref()),
            None => (self.trusted_features.clone(), self.trusted_labels.clone(), None),
        };
        let raw = predict_proba(clf, &features)?;
        let clf_acc = self.validation.map(|_| raw.accuracy(&labels));
        let ece_pre = calibration::expected_calibration_error(&raw, &labels, self.config.bins)?;
        let ece_post = match cal {
            Some(c) => Some(calibration::expected_calibration_error(&c.calibrate(&raw)?, &labels, self.config.bins)?),
            None => None,
        };
        let agg_acc = match annotations {
            Some(a) if self.config.variant != Variant::Tcls || a.is_complete() => {
                Some(agg.predict(a, &self.prior)?.accuracy(&labels))
            }
            _ => None,
        };
        Ok((clf_acc, agg_acc, Some(ece_pre), ece_post))
    }
}

fn require_complete(untrusted: &UntrustedDataset, trusted: &TrustedDataset) -> Result<()> {
    if !untrusted.annotations.is_complete() {
        return Err(Error::MissingAnnotation(format!(
            "{} untrusted cells are missing",
            untrusted.annotations.missing_count()
        )));
    }
    match &trusted.annotations {
        None => Err(Error::MissingAnnotation("trusted set carries no annotations".into())),
        Some(a) if !a.is_complete() => Err(Error::MissingAnnotation("trusted annotations have missing cells".into())),
        Some(_) => Ok(()),
    }
}

/// Runs the alternating stage and the retraining stage.
pub fn run_tcl(
    untrusted: &UntrustedDataset,
    trusted: &TrustedDataset,
    validation: Option<&TrustedDataset>,
    classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let config = TrainConfig { variant: Variant::Tcl, ..config.clone() };
    run_alternating(untrusted, trusted, validation, classes, &config)
}

/// Complete-data variant with a neural aggregator.
pub fn run_tcls(
    untrusted: &UntrustedDataset,
    trusted: &TrustedDataset,
    validation: Option<&TrustedDataset>,
    classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let config = TrainConfig { variant: Variant::Tcls, ..config.clone() };
    run_alternating(untrusted, trusted, validation, classes, &config)
}

fn run_alternating(
    untrusted: &UntrustedDataset,
    trusted: &TrustedDataset,
    validation: Option<&TrustedDataset>,
    classes: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let report = crate::data::validate_dataset(untrusted, trusted, classes);
    if !report.is_valid() {
        return Err(Error::InvalidInput(report.to_string().trim_end().replace('\n', "; ")));
    }
    let neural = config.variant == Variant::Tcls;
    if neural {
        require_complete(untrusted, trusted)?;
    }
    let seed = config.seed();
    let prior = crate::data::estimate_class_prior(trusted, classes, config.prior_alpha)?;
    let views = Views {
        untrusted,
        trusted,
        validation,
        prior: prior.clone(),
        config,
        trusted_features: trusted.features(),
        trusted_labels: trusted.labels(),
    };

    let mut colabels = match config.init_mode() {
        ColabelInit::Mv => majority_vote(&untrusted.annotations, classes)?,
        ColabelInit::TrustedNb => {
            init_colabels_trusted_nb(trusted, &untrusted.annotations, &prior, config.confusion_alpha)?
        }
    };
    let mut history = TrainHistory { initial_colabel_acc: views.colabel_acc(&colabels), ..Default::default() };

    let mut clf = init_classifier(untrusted.dim(), &config.classifier_hidden, classes, seed.child("classifier", 0))?;
    let mut clf_opt = Optimizer::new(config.classifier_opt.clone());
    let mut agg = if neural {
        AggregatorState::Neural(aggregator::init_neural_aggregator(
            untrusted.annotations.m(),
            classes,
            &config.aggregator_hidden,
            seed.child("aggregator", 0),
        ))
    } else {
        AggregatorState::NaiveBayes(fit_nb_confusions(&untrusted.annotations, &colabels, config.confusion_alpha)?)
    };
    let mut agg_opt = Optimizer::new(config.aggregator_opt.clone());
    let mut calibrator = None;

    for t in 0..config.iterations {
        // train the aggregator view on the current co-labels
        let agg_loss = match &mut agg {
            AggregatorState::NaiveBayes(c) => {
                *c = fit_nb_confusions(&untrusted.annotations, &colabels, config.confusion_alpha)?;
                nb_loss(&untrusted.annotations, &colabels, c, &prior)? / untrusted.len().max(1) as f64
            }
            AggregatorState::Neural(p) => {
                let mut rng = seed.indexed_stream("aggregator-epochs", t as u64);
                let trace = aggregator::fit_neural_aggregator(
                    p,
                    &untrusted.annotations,
                    &colabels,
                    &mut agg_opt,
                    config.aggregator_epochs,
                    &mut rng,
                )?;
                trace.last().copied().unwrap_or(f64::NAN)
            }
        };
        let agg_untrusted = agg.predict(&untrusted.annotations, &prior)?;

        let (updated, _) = views.combine(&clf, &agg, &agg_untrusted)?;
        colabels = updated;
        history.colabel_updates += 1;
        let colabel_acc_mid = views.colabel_acc(&colabels);

        // train the data classifier on the refreshed co-labels
        let mut rng = seed.indexed_stream("classifier-epochs", t as u64);
        let trace = classifier::train_weighted(
            &mut clf,
            &untrusted.features,
            &colabels,
            None,
            &mut clf_opt,
            config.epochs_for(t),
            &mut rng,
        )?;
        let clf_loss = trace.last().copied().unwrap_or(f64::NAN);

        let (updated, cal) = views.combine(&clf, &agg, &agg_untrusted)?;
        colabels = updated;
        history.colabel_updates += 1;

        let (clf_val_acc, agg_val_acc, ece_pre, ece_post) = views.validation_metrics(&clf, &agg, cal.as_ref())?;
        let record = IterationRecord {
            iter: t + 1,
            colabel_acc_mid,
            colabel_acc: views.colabel_acc(&colabels),
            clf_val_acc,
            agg_val_acc,
            ece_pre,
            ece_post,
            clf_loss,
            agg_loss,
        };
        debug!("iteration {}: {:?}", t + 1, record);
        history.iterations.push(record);
        calibrator = cal;
    }
    if let Some(last) = history.iterations.last() {
        info!(
            "alternating stage done: co-label acc {:?}, classifier val acc {:?}",
            last.colabel_acc, last.clf_val_acc
        );
    }

    let alternate_classifier = clf.clone();
    let classifier = match config.retrain {
        RetrainMode::None => clf,
        mode => retrain(untrusted, &colabels, trusted, config, mode)?,
    };
    Ok(TrainOutcome {
        classifier,
        alternate_classifier,
        colabels,
        aggregator: agg,
        prior: views.prior,
        history,
        calibrator,
    })
}

/// Reinitializes the classifier and trains it on fixed co-labels, plus the
/// trusted rows with clean labels in [`RetrainMode::Full`].
pub fn retrain(
    untrusted: &UntrustedDataset,
    colabels: &SoftLabelMatrix,
    trusted: &TrustedDataset,
    config: &TrainConfig,
    mode: RetrainMode,
) -> Result<ClassifierParams> {
    let classes = colabels.classes();
    let seed = config.seed();
    let mut clf = init_classifier(untrusted.dim(), &config.classifier_hidden, classes, seed.child("retrain", 0))?;
    if mode == RetrainMode::None {
        return Ok(clf);
    }
    let (features, targets, weights) = if mode == RetrainMode::Full {
        let features = untrusted.features.vstack(&trusted.features())?;
        let mut rows = colabels.as_matrix().clone();
        rows = rows.vstack(SoftLabelMatrix::one_hot(&trusted.labels(), classes).as_matrix())?;
        let mut weights = vec![1.0; untrusted.len()];
        weights.extend(std::iter::repeat_n(config.trusted_weight, trusted.len()));
        (features, SoftLabelMatrix::new(rows)?, weights)
    } else {
        (untrusted.features.clone(), colabels.clone(), vec![1.0; untrusted.len()])
    };
    let opt = config.retrain_opt.clone().unwrap_or_else(|| config.classifier_opt.clone());
    let mut state = Optimizer::new(opt);
    let mut rng = seed.stream("retrain-epochs");
    let uniform = weights.iter().all(|&w| w == 1.0);
    classifier::train_weighted(
        &mut clf,
        &features,
        &targets,
        if uniform { None } else { Some(&weights) },
        &mut state,
        config.retrain_epochs,
        &mut rng,
    )?;
    Ok(clf)
}

/// Trains on hard majority votes (ties to the lowest class), optionally
/// followed by fine-tuning on the trusted set.
pub fn run_baseline_mv(
    untrusted: &UntrustedDataset,
    trusted: &TrustedDataset,
    classes: usize,
    config: &TrainConfig,
    finetune: bool,
) -> Result<ClassifierParams> {
    config.validate()?;
    let seed = config.seed();
    let labels = aggregator::hard_majority_vote(&untrusted.annotations, classes)?;
    let targets = SoftLabelMatrix::one_hot(&labels, classes);
    let mut clf = init_classifier(untrusted.dim(), &config.classifier_hidden, classes, seed.child("classifier", 0))?;
    let mut opt = Optimizer::new(config.classifier_opt.clone());
    let mut rng = seed.stream("baseline-epochs");
    classifier::train_weighted(&mut clf, &untrusted.features, &targets, None, &mut opt, config.baseline_epochs, &mut rng)?;
    if finetune {
        let mut rng = seed.stream("finetune-epochs");
        classifier::fine_tune(&mut clf, trusted, &config.finetune_opt, &mut rng)?;
    }
    Ok(clf)
}
