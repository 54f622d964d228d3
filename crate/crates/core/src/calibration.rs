//! Isotonic (pool-adjacent-violators) calibration on the trusted set, and
//! expected-calibration-error / reliability reporting.

use std::io::Write;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::SoftLabelMatrix;
use crate::error::{Error, Result};
use crate::matrix::{argmax, Matrix};

/// Classes with fewer trusted examples than this keep an identity map.
pub const MIN_CLASS_SUPPORT: usize = 10;
/// Per-entry floor applied before renormalizing calibrated rows.
pub const CALIBRATED_FLOOR: f64 = 1e-6;
pub const DEFAULT_BINS: usize = 15;

/// Non-decreasing step function fitted by PAV. Block `b` covers scores from
/// `thresholds[b]` up to the next threshold; `thresholds[0]` is the smallest
/// training score and later thresholds sit midway between adjacent blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicMap {
    thresholds: Vec<f64>,
    values: Vec<f64>,
}

impl IsotonicMap {
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates the step function, clamping outside the training range.
    pub fn apply(&self, score: f64) -> f64 {
        let b = self.thresholds.partition_point(|&t| t <= score);
        self.values[b.saturating_sub(1)]
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    lo: f64,
    hi: f64,
    sum_wy: f64,
    sum_w: f64,
    len: usize,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum_wy / self.sum_w
    }
}

fn check_inputs(scores: &[f64], targets: &[f64], weights: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty("isotonic fit input"));
    }
    if scores.len() != targets.len() || scores.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} scores, {} targets, {} weights",
            scores.len(),
            targets.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) || scores.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("isotonic fit needs finite values and positive weights".into()));
    }
    Ok(())
}

/// PAV over points sorted by score, with equal scores pooled first.
/// Returns the blocks and the sort order used.
fn pav_blocks(scores: &[f64], targets: &[f64], weights: &[f64]) -> (Vec<Block>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // pool equal scores before any violation check
    let mut pooled: Vec<Block> = Vec::new();
    for &i in &order {
        let s = scores[i];
        match pooled.last_mut() {
            Some(top) if top.hi == s => {
                top.sum_wy += weights[i] * targets[i];
                top.sum_w += weights[i];
                top.len += 1;
            }
            _ => pooled.push(Block { lo: s, hi: s, sum_wy: weights[i] * targets[i], sum_w: weights[i], len: 1 }),
        }
    }
    let mut stack: Vec<Block> = Vec::with_capacity(pooled.len());
    for point in pooled {
        stack.push(point);
        while stack.len() >= 2 && stack[stack.len() - 2].mean() > stack[stack.len() - 1].mean() {
            let top = stack.pop().expect("len >= 2");
            let prev = stack.last_mut().expect("len >= 1");
            prev.hi = top.hi;
            prev.sum_wy += top.sum_wy;
            prev.sum_w += top.sum_w;
            prev.len += top.len;
        }
    }
    (stack, order)
}

/// Weighted isotonic least-squares fit; fitted value of every input point,
/// in input order.
pub fn isotonic_regression(scores: &[f64], targets: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    check_inputs(scores, targets, weights)?;
    let (blocks, order) = pav_blocks(scores, targets, weights);
    let mut fitted = vec![0.0; scores.len()];
    let mut pos = 0;
    for b in &blocks {
        let v = b.mean();
        for &i in &order[pos..pos + b.len] {
            fitted[i] = v;
        }
        pos += b.len;
    }
    Ok(fitted)
}

/// Fits the step function mapping scores to calibrated probabilities.
pub fn pav_fit(scores: &[f64], targets: &[f64], weights: &[f64]) -> Result<IsotonicMap> {
    check_inputs(scores, targets, weights)?;
    let (blocks, _) = pav_blocks(scores, targets, weights);
    let mut thresholds = Vec::with_capacity(blocks.len());
    thresholds.push(blocks[0].lo);
    for w in blocks.windows(2) {
        thresholds.push(0.5 * (w[0].hi + w[1].lo));
    }
    let values = blocks.iter().map(|b| b.mean().clamp(0.0, 1.0)).collect();
    Ok(IsotonicMap { thresholds, values })
}

pub fn apply_calibration(map: &IsotonicMap, score: f64) -> f64 {
    map.apply(score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassMap {
    Isotonic(IsotonicMap),
    /// Too few trusted examples; scores pass through.
    Identity,
}

impl ClassMap {
    pub fn apply(&self, score: f64) -> f64 {
        match self {
            ClassMap::Isotonic(m) => m.apply(score),
            ClassMap::Identity => score,
        }
    }
}

/// One-vs-rest isotonic maps, one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub classes: Vec<ClassMap>,
}

impl CalibrationMap {
    pub fn identity(classes: usize) -> Self {
        CalibrationMap { classes: vec![ClassMap::Identity; classes] }
    }

    /// Applies each class map, floors entries at 1e-6 and renormalizes.
    pub fn calibrate_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> =
            self.classes.iter().zip(row).map(|(m, &p)| m.apply(p).max(CALIBRATED_FLOOR)).collect();
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= total);
        out
    }

    pub fn calibrate(&self, preds: &SoftLabelMatrix) -> Result<SoftLabelMatrix> {
        if preds.classes() != self.classes.len() {
            return Err(Error::Shape(format!(
                "{}-class predictions for a {}-class calibrator",
                preds.classes(),
                self.classes.len()
            )));
        }
        let mut out = Matrix::zeros(preds.n(), preds.classes());
        for (i, row) in preds.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.calibrate_row(row));
        }
        SoftLabelMatrix::new(out)
    }
}

/// Per-class isotonic fit of `pred[k]` against `1[label == k]`.
pub fn fit_multiclass_calibrator(preds: &SoftLabelMatrix, labels: &[usize]) -> Result<CalibrationMap> {
    if preds.n() == 0 {
        return Err(Error::Empty("trusted predictions"));
    }
    if preds.n() != labels.len() {
        return Err(Error::Shape(format!("{} predictions vs {} labels", preds.n(), labels.len())));
    }
    let classes = preds.classes();
    let weights = vec![1.0; preds.n()];
    let mut maps = Vec::with_capacity(classes);
    for k in 0..classes {
        let support = labels.iter().filter(|&&y| y == k).count();
        if support < MIN_CLASS_SUPPORT {
            warn!("class {k} has {support} trusted examples; leaving its scores uncalibrated");
            maps.push(ClassMap::Identity);
            continue;
        }
        let scores: Vec<f64> = preds.iter_rows().map(|r| r[k]).collect();
        let targets: Vec<f64> = labels.iter().map(|&y| f64::from(u8::from(y == k))).collect();
        maps.push(ClassMap::Isotonic(pav_fit(&scores, &targets, &weights)?));
    }
    Ok(CalibrationMap { classes: maps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_conf: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bins: Vec<ReliabilityBin>,
    /// Expected calibration error as a fraction in `[0, 1]`.
    pub ece: f64,
}

impl ReliabilityReport {
    /// ECE on the percent scale used in reports.
    pub fn ece_percent(&self) -> f64 {
        self.ece * 100.0
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// `bin_lo,bin_hi,count,mean_conf,accuracy` rows, then `ece,<percent>`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record(["bin_lo", "bin_hi", "count", "mean_conf", "accuracy"])?;
        for b in &self.bins {
            w.write_record([
                b.lo.to_string(),
                b.hi.to_string(),
                b.count.to_string(),
                b.mean_conf.to_string(),
                b.accuracy.to_string(),
            ])?;
        }
        w.write_record(["ece".to_string(), self.ece_percent().to_string()])?;
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file).map_err(|e| Error::csv(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<ReliabilityReport> {
        let mut r = csv::ReaderBuilder::new().flexible(true).from_path(path).map_err(|e| Error::csv(path, e))?;
        let mut bins = Vec::new();
        let mut ece = None;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::InvalidInput(format!("{}: bad field {i}", path.display())))
            };
            if rec.get(0) == Some("ece") {
                ece = Some(num(1)? / 100.0);
            } else {
                bins.push(ReliabilityBin {
                    lo: num(0)?,
                    hi: num(1)?,
                    count: num(2)? as usize,
                    mean_conf: num(3)?,
                    accuracy: num(4)?,
                });
            }
        }
        let ece = ece.ok_or_else(|| Error::InvalidInput(format!("{}: no ece row", path.display())))?;
        Ok(ReliabilityReport { bins, ece })
    }
}

/// Equal-width binning of top-class confidence over `[0, 1]`.
pub fn reliability_report(preds: &SoftLabelMatrix, labels: &[usize], bins: usize) -> Result<ReliabilityReport> {
    if preds.n() == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    if bins == 0 {
        return Err(Error::InvalidInput("at least one bin is required".into()));
    }
    if preds.n() != labels.len() {
        return Err(Error::Shape(format!("{} predictions vs {} labels", preds.n(), labels.len())));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    for (row, &y) in preds.iter_rows().zip(labels) {
        let k = argmax(row);
        let conf = row[k];
        let b = ((conf * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        hits[b] += usize::from(k == y);
    }
    let n = preds.n() as f64;
    let mut ece = 0.0;
    let report_bins = (0..bins)
        .map(|b| {
            let (mean_conf, accuracy) = if count[b] > 0 {
                (conf_sum[b] / count[b] as f64, hits[b] as f64 / count[b] as f64)
            } else {
                (0.0, 0.0)
            };
            ece += count[b] as f64 / n * (accuracy - mean_conf).abs();
            ReliabilityBin {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: count[b],
                mean_conf,
                accuracy,
            }
        })
        .collect();
    Ok(ReliabilityReport { bins: report_bins, ece })
}

/// ECE in percent.
pub fn expected_calibration_error(preds: &SoftLabelMatrix, labels: &[usize], bins: usize) -> Result<f64> {
    Ok(reliability_report(preds, labels, bins)?.ece_percent())
}
