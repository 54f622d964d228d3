//! The `colabel` command-line harness.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::aggregator::hard_majority_vote;
use crate::calibration::{expected_calibration_error, reliability_report};
use crate::classifier::{predict_proba, ClassifierParams};
use crate::config::ExperimentConfig;
use crate::data::{accuracy, SoftLabelMatrix, TrustedDataset};
use crate::error::{Error, Result};
use crate::io::{self, Dataset, FeatureIndex};
use crate::noise::annotator_accuracy;
use crate::trainer::{self, ColabelInit, IterationRecord, RetrainMode, TrainConfig, TrainHistory, TrainOutcome, Variant};

pub const METRICS_FILE: &str = "metrics.csv";
pub const COLABELS_FILE: &str = "colabels.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFUSIONS_FILE: &str = "confusions.json";
pub const AGGREGATOR_FILE: &str = "aggregator.json";
pub const RELIABILITY_FILE: &str = "reliability_bins.csv";
pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const ABLATION_FILE: &str = "ablation_report.csv";

#[derive(Debug, Parser)]
#[command(name = "colabel", version, about = "Co-label learning from multiple noisy annotators")]
pub struct Cli {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SharedArgs {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub variant: Option<VariantArg>,
    /// Fine-tune the majority-vote baseline on the trusted set.
    #[arg(long, global = true)]
    pub finetune: bool,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Tcl,
    Tcls,
    DlMv,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Tcl => Variant::Tcl,
            VariantArg::Tcls => Variant::Tcls,
            VariantArg::DlMv => Variant::DlMv,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset described by the config's simulation block.
    Simulate,
    /// Train the configured variant and write all artifacts.
    Train {
        /// Mode switch such as `calibration=off`, `retrain=none`, `init=trusted-nb`.
        #[arg(long = "ablate", value_name = "KEY=VALUE")]
        ablate: Vec<String>,
    },
    /// Score a saved classifier on labeled data.
    Evaluate {
        /// Defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the config's feature file.
        #[arg(long)]
        features: Option<PathBuf>,
        /// `id,label` file; defaults to the config's validation (or truth) file.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Run the configured ablation sweep.
    Ablate,
}

/// Parses arguments, runs, and maps errors to exit codes (1 validation, 2 runtime).
pub fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("COLABEL_LOG", "warn")).try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

/// Runs one command and returns the text summary it would print.
pub fn run(cli: Cli) -> Result<String> {
    let cfg = load_config(&cli.shared)?;
    let out = output_dir(&cli.shared, &cfg);
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &out),
        Command::Train { ablate } => {
            let mut cfg = cfg;
            for switch in &ablate {
                apply_switch(&mut cfg.train, switch)?;
            }
            cmd_train(&cfg, &out)
        }
        Command::Evaluate { checkpoint, features, labels, classes } => {
            let checkpoint = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let paths = cfg.data.clone();
            let features = features
                .or_else(|| paths.as_ref().map(|p| p.features.clone()))
                .ok_or_else(|| Error::Config("evaluate needs --features or dataset paths".into()))?;
            let labels = labels
                .or_else(|| paths.as_ref().and_then(|p| p.validation.clone().or_else(|| p.truth.clone())))
                .ok_or_else(|| Error::Config("evaluate needs --labels or a validation/truth file".into()))?;
            cmd_evaluate(&checkpoint, &features, &labels, classes, &out)
        }
        Command::Ablate => cmd_ablate(&cfg, &out),
    }
}

fn load_config(shared: &SharedArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &shared.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = shared.seed {
        cfg.train.seed = seed;
    }
    if let Some(v) = shared.variant {
        cfg.train.variant = v.into();
    }
    if shared.finetune {
        cfg.train.finetune = true;
    }
    if let Some(t) = shared.iterations {
        cfg.train.iterations = t;
    }
    Ok(cfg)
}

fn output_dir(shared: &SharedArgs, cfg: &ExperimentConfig) -> PathBuf {
    shared.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

/// Applies a `key=value` mode switch to the training config.
pub fn apply_switch(train: &mut TrainConfig, switch: &str) -> Result<()> {
    let (key, value) = switch
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("switch {switch:?} is not KEY=VALUE")))?;
    let bad = || Error::Config(format!("unknown value {value:?} for {key}"));
    match key.trim() {
        "calibration" => {
            train.calibration = match value {
                "on" | "true" => true,
                "off" | "false" => false,
                _ => return Err(bad()),
            }
        }
        "calibrate-aggregator" => {
            train.calibrate_aggregator = Some(match value {
                "on" | "true" => true,
                "off" | "false" => false,
                _ => return Err(bad()),
            })
        }
        "retrain" => {
            train.retrain = match value {
                "full" => RetrainMode::Full,
                "noisy-only" => RetrainMode::NoisyOnly,
                "none" => RetrainMode::None,
                _ => return Err(bad()),
            }
        }
        "init" => {
            train.colabel_init = Some(match value {
                "mv" => ColabelInit::Mv,
                "trusted-nb" => ColabelInit::TrustedNb,
                _ => return Err(bad()),
            })
        }
        other => return Err(Error::Config(format!("unknown switch {other:?}"))),
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let sim = cfg.simulation.as_ref().ok_or_else(|| Error::Config("simulate needs a simulation block".into()))?;
    let data = cfg.dataset()?;
    create_dir(out)?;
    io::write_dataset(out, &data)?;
    let truth = data.untrusted.truth.as_deref().unwrap_or_default();
    let mut s = format!(
        "wrote {} untrusted, {} trusted, {} validation rows ({} annotators, {} classes) to {}\n",
        data.untrusted.len(),
        data.trusted.len(),
        data.validation.as_ref().map_or(0, TrustedDataset::len),
        data.untrusted.annotations.m(),
        sim.classes,
        out.display()
    );
    for (j, acc) in annotator_accuracy(truth, &data.untrusted.annotations).iter().enumerate() {
        let _ = writeln!(s, "annotator {j}: accuracy {acc:.4}");
    }
    Ok(s)
}

/// Final numbers of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub colabel_acc: Option<f64>,
    pub clf_val_acc: Option<f64>,
    pub ece: Option<f64>,
}

/// Held-out set for reporting: the validation set, else the trusted set.
fn eval_set(data: &Dataset) -> &TrustedDataset {
    data.validation.as_ref().unwrap_or(&data.trusted)
}

fn train_dataset(cfg: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<RunSummary> {
    let train = &cfg.train;
    let classes = cfg.class_count();
    create_dir(out)?;
    let eval = eval_set(data);
    let (classifier, history, colabels, outcome): (ClassifierParams, TrainHistory, SoftLabelMatrix, Option<TrainOutcome>) =
        match train.variant {
            Variant::DlMv => {
                let clf = trainer::run_baseline_mv(&data.untrusted, &data.trusted, classes, train, train.finetune)?;
                let mv = hard_majority_vote(&data.untrusted.annotations, classes)?;
                let colabels = SoftLabelMatrix::one_hot(&mv, classes);
                let raw = predict_proba(&clf, &eval.features())?;
                let labels = eval.labels();
                let record = IterationRecord {
                    iter: 0,
                    colabel_acc_mid: None,
                    colabel_acc: data.untrusted.truth.as_ref().map(|t| accuracy(&mv, t)),
                    clf_val_acc: Some(raw.accuracy(&labels)),
                    agg_val_acc: None,
                    ece_pre: Some(expected_calibration_error(&raw, &labels, train.bins)?),
                    ece_post: None,
                    clf_loss: f64::NAN,
                    agg_loss: f64::NAN,
                };
                let history = TrainHistory { iterations: vec![record], ..Default::default() };
                (clf, history, colabels, None)
            }
            Variant::Tcl | Variant::Tcls => {
                let run = if train.variant == Variant::Tcl { trainer::run_tcl } else { trainer::run_tcls };
                let outcome = run(&data.untrusted, &data.trusted, data.validation.as_ref(), classes, train)?;
                (outcome.classifier.clone(), outcome.history.clone(), outcome.colabels.clone(), Some(outcome))
            }
        };

    history.save(&out.join(METRICS_FILE))?;
    io::write_colabels(&out.join(COLABELS_FILE), &data.untrusted.ids, &colabels)?;
    write_text(&out.join(CHECKPOINT_FILE), &serde_json::to_string(&classifier)?)?;
    if let Some(o) = &outcome {
        match &o.aggregator {
            trainer::AggregatorState::NaiveBayes(c) => write_text(&out.join(CONFUSIONS_FILE), &c.to_json()?)?,
            trainer::AggregatorState::Neural(p) => write_text(&out.join(AGGREGATOR_FILE), &serde_json::to_string(p)?)?,
        }
    }
    let raw = predict_proba(&classifier, &eval.features())?;
    let report = reliability_report(&raw, &eval.labels(), train.bins)?;
    report.save(&out.join(RELIABILITY_FILE))?;

    let summary = RunSummary {
        colabel_acc: data.untrusted.truth.as_ref().map(|t| colabels.accuracy(t)),
        clf_val_acc: data.validation.as_ref().map(|v| raw.accuracy(&v.labels())),
        ece: Some(report.ece_percent()),
    };
    info!("run finished: {summary:?}");
    Ok(summary)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let data = cfg.dataset()?;
    let summary = train_dataset(cfg, &data, out)?;
    Ok(format!(
        "co-label accuracy {}\nvalidation accuracy {}\nECE {}%\nartifacts in {}\n",
        fmt_opt(summary.colabel_acc),
        fmt_opt(summary.clf_val_acc),
        fmt_opt(summary.ece),
        out.display()
    ))
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    features: &Path,
    labels: &Path,
    classes: Option<usize>,
    out: &Path,
) -> Result<String> {
    let text = fs::read_to_string(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let clf: ClassifierParams = serde_json::from_str(&text)?;
    let index = FeatureIndex::load(features)?;
    if index.dim() != clf.feature_dim() {
        return Err(Error::Shape(format!(
            "checkpoint expects {} features, data has {}",
            clf.feature_dim(),
            index.dim()
        )));
    }
    let rows = io::read_labels(labels)?;
    let c = classes.unwrap_or_else(|| clf.classes());
    if c != clf.classes() {
        return Err(Error::Shape(format!("checkpoint has {} classes, expected {c}", clf.classes())));
    }
    if let Some(bad) = rows.labels.iter().find(|&&y| y >= c) {
        return Err(Error::InvalidInput(format!("label {bad} outside {c} classes")));
    }
    let preds = predict_proba(&clf, &index.gather(&rows.ids)?)?;
    let pred = preds.hard_labels();
    let acc = accuracy(&pred, &rows.labels);
    let report = reliability_report(&preds, &rows.labels, crate::calibration::DEFAULT_BINS)?;
    let ece = expected_calibration_error(&preds, &rows.labels, crate::calibration::DEFAULT_BINS)?;

    create_dir(out)?;
    report.save(&out.join(RELIABILITY_FILE))?;
    let path = out.join(EVALUATION_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let mut s = String::new();
    let mut row = |w: &mut csv::Writer<fs::File>, name: String, v: f64| -> Result<()> {
        let _ = writeln!(s, "{name} {v}");
        w.write_record([name, v.to_string()]).map_err(|e| Error::csv(&path, e))
    };
    w.write_record(["metric", "value"]).map_err(|e| Error::csv(&path, e))?;
    row(&mut w, "accuracy".into(), acc)?;
    for k in 0..c {
        let idx: Vec<usize> = (0..rows.labels.len()).filter(|&i| rows.labels[i] == k).collect();
        if !idx.is_empty() {
            let hits = idx.iter().filter(|&&i| pred[i] == k).count();
            row(&mut w, format!("accuracy_class_{k}"), hits as f64 / idx.len() as f64)?;
        }
    }
    row(&mut w, "ece".into(), ece)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(s)
}

#[derive(Debug, Clone)]
struct Cell {
    axis: &'static str,
    value: String,
    config: TrainConfig,
    trusted: Option<usize>,
}

fn ablation_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let base = &cfg.train;
    let a = &cfg.ablation;
    let mut cells = Vec::new();
    for &on in &a.calibration {
        let config = TrainConfig { calibration: on, ..base.clone() };
        cells.push(Cell { axis: "calibration", value: if on { "on" } else { "off" }.into(), config, trusted: None });
    }
    for &k in &a.trusted_sizes {
        cells.push(Cell { axis: "trusted_size", value: k.to_string(), config: base.clone(), trusted: Some(k) });
    }
    for &mode in &a.retrain {
        let value = match mode {
            RetrainMode::Full => "full",
            RetrainMode::NoisyOnly => "noisy-only",
            RetrainMode::None => "none",
        };
        let config = TrainConfig { retrain: mode, ..base.clone() };
        cells.push(Cell { axis: "retrain", value: value.into(), config, trusted: None });
    }
    for &init in &a.colabel_init {
        let value = match init {
            ColabelInit::Mv => "mv",
            ColabelInit::TrustedNb => "trusted-nb",
        };
        let config = TrainConfig { colabel_init: Some(init), ..base.clone() };
        cells.push(Cell { axis: "colabel_init", value: value.into(), config, trusted: None });
    }
    cells
}

/// One-factor-at-a-time sweep sharing the base seed; one report row per cell.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    if cfg.ablation.is_empty() {
        return Err(Error::Config("ablate needs at least one ablation axis".into()));
    }
    let data = cfg.dataset()?;
    create_dir(out)?;
    let path = out.join(ABLATION_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    w.write_record(["axis", "value", "colabel_acc", "clf_val_acc", "ece"]).map_err(|e| Error::csv(&path, e))?;
    let mut s = String::new();
    for cell in ablation_cells(cfg) {
        let mut cell_data = data.clone();
        if let Some(k) = cell.trusted {
            cell_data.trusted = data.trusted.take(k)?;
        }
        let cell_cfg = ExperimentConfig { train: cell.config.clone(), ..cfg.clone() };
        let dir = out.join(format!("{}_{}", cell.axis, cell.value));
        let r = train_dataset(&cell_cfg, &cell_data, &dir)?;
        let field = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([cell.axis.to_string(), cell.value.clone(), field(r.colabel_acc), field(r.clf_val_acc), field(r.ece)])
            .map_err(|e| Error::csv(&path, e))?;
        let _ = writeln!(
            s,
            "{}={}: co-label accuracy {}, validation accuracy {}",
            cell.axis,
            cell.value,
            fmt_opt(r.colabel_acc),
            fmt_opt(r.clf_val_acc)
        );
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(s)
}
