//! CSV dataset files joined by instance id, plus co-label output.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{AnnotationMatrix, LabeledExample, SoftLabelMatrix, TrustedDataset, UntrustedDataset};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const FEATURES_FILE: &str = "features.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const TRUSTED_FILE: &str = "trusted.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const VALIDATION_FILE: &str = "validation.csv";

/// Everything a training run reads from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub untrusted: UntrustedDataset,
    pub trusted: TrustedDataset,
    pub validation: Option<TrustedDataset>,
}

/// Explicit file locations; `truth` and `validation` are optional.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub annotations: PathBuf,
    pub trusted: PathBuf,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub validation: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside `dir`; optional files are used if present.
    pub fn in_dir(dir: &Path) -> DatasetPaths {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        DatasetPaths {
            features: dir.join(FEATURES_FILE),
            annotations: dir.join(ANNOTATIONS_FILE),
            trusted: dir.join(TRUSTED_FILE),
            truth: opt(TRUTH_FILE),
            validation: opt(VALIDATION_FILE),
        }
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{}: {msg}", path.display()))
}

fn parse_label(path: &Path, s: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| bad(path, format!("bad label {s:?}")))
}

fn parse_cell(path: &Path, s: &str) -> Result<Option<usize>> {
    match s.trim().parse::<i64>() {
        Ok(-1) => Ok(None),
        Ok(v) if v >= 0 => Ok(Some(v as usize)),
        _ => Err(bad(path, format!("bad annotation cell {s:?}"))),
    }
}

fn cell_text(c: Option<usize>) -> String {
    c.map_or_else(|| "-1".to_string(), |v| v.to_string())
}

/// Returns the number of columns named `{prefix}0, {prefix}1, ...` starting at `from`.
fn prefixed_columns(path: &Path, header: &csv::StringRecord, from: usize, prefix: &str) -> Result<usize> {
    for (k, name) in header.iter().skip(from).enumerate() {
        if name.trim() != format!("{prefix}{k}") {
            return Err(bad(path, format!("unexpected column {name:?}, expected {prefix}{k}")));
        }
    }
    Ok(header.len().saturating_sub(from))
}

fn check_header(path: &Path, header: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (k, name) in expected.iter().enumerate() {
        if header.get(k).map(str::trim) != Some(*name) {
            return Err(bad(path, format!("column {k} must be {name:?}")));
        }
    }
    Ok(())
}

/// Reads `id,f0..f{d-1}`, keeping file order.
pub fn read_features(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    check_header(path, &header, &["id"])?;
    let d = prefixed_columns(path, &header, 1, "f")?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        ids.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            data.push(v.trim().parse::<f64>().map_err(|_| bad(path, format!("bad feature {v:?}")))?);
        }
    }
    Ok((ids.clone(), Matrix::from_vec(ids.len(), d, data)?))
}

pub fn write_features(path: &Path, ids: &[String], features: &Matrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..features.cols()).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (id, row) in ids.iter().zip(features.iter_rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `id,a0..a{m-1}` with `-1` for missing cells.
pub fn read_annotations(path: &Path) -> Result<(Vec<String>, AnnotationMatrix)> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    check_header(path, &header, &["id"])?;
    let m = prefixed_columns(path, &header, 1, "a")?;
    let mut ids = Vec::new();
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        ids.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            cells.push(parse_cell(path, v)?);
        }
    }
    let n = ids.len();
    Ok((ids, AnnotationMatrix::new(n, m, cells)?))
}

pub fn write_annotations(path: &Path, ids: &[String], annotations: &AnnotationMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..annotations.m()).map(|k| format!("a{k}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (id, row) in ids.iter().zip(annotations.iter_rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|c| cell_text(*c)));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows of a labeled file: `id,label` plus optional `a0..` annotation columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRows {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub annotations: Option<AnnotationMatrix>,
}

pub fn read_labels(path: &Path) -> Result<LabelRows> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    check_header(path, &header, &["id", "label"])?;
    let m = prefixed_columns(path, &header, 2, "a")?;
    let (mut ids, mut labels, mut cells) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        ids.push(rec[0].to_string());
        labels.push(parse_label(path, &rec[1])?);
        for v in rec.iter().skip(2) {
            cells.push(parse_cell(path, v)?);
        }
    }
    let annotations = if m > 0 { Some(AnnotationMatrix::new(ids.len(), m, cells)?) } else { None };
    Ok(LabelRows { ids, labels, annotations })
}

pub fn write_labels(path: &Path, ids: &[String], labels: &[usize], annotations: Option<&AnnotationMatrix>) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    if let Some(a) = annotations {
        header.extend((0..a.m()).map(|k| format!("a{k}")));
    }
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (i, (id, label)) in ids.iter().zip(labels).enumerate() {
        let mut rec = vec![id.clone(), label.to_string()];
        if let Some(a) = annotations {
            rec.extend(a.row(i).iter().map(|c| cell_text(*c)));
        }
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Looks up feature rows by id.
pub struct FeatureIndex {
    ids: HashMap<String, usize>,
    features: Matrix,
}

impl FeatureIndex {
    pub fn new(ids: Vec<String>, features: Matrix) -> Result<Self> {
        let mut map = HashMap::with_capacity(ids.len());
        for (i, id) in ids.into_iter().enumerate() {
            if map.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate feature id {id:?}")));
            }
        }
        Ok(FeatureIndex { ids: map, features })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (ids, features) = read_features(path)?;
        Self::new(ids, features)
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, id: &str) -> Result<&[f64]> {
        self.ids
            .get(id)
            .map(|&i| self.features.row(i))
            .ok_or_else(|| Error::InvalidInput(format!("id {id:?} has no feature row")))
    }

    pub fn gather(&self, ids: &[String]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(ids.len() * self.dim());
        for id in ids {
            data.extend_from_slice(self.row(id)?);
        }
        Matrix::from_vec(ids.len(), self.dim(), data)
    }

    pub fn labeled(&self, rows: LabelRows) -> Result<TrustedDataset> {
        let mut examples = Vec::with_capacity(rows.ids.len());
        for (id, label) in rows.ids.into_iter().zip(rows.labels) {
            let features = self.row(&id)?.to_vec();
            examples.push(LabeledExample { id, features, label });
        }
        TrustedDataset::new(examples, rows.annotations)
    }
}

pub fn read_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let index = FeatureIndex::load(&paths.features)?;
    let (ids, annotations) = read_annotations(&paths.annotations)?;
    let features = index.gather(&ids)?;
    let truth = match &paths.truth {
        Some(p) => {
            let rows = read_labels(p)?;
            let map: HashMap<&str, usize> = rows.ids.iter().map(String::as_str).zip(rows.labels.iter().copied()).collect();
            let truth = ids
                .iter()
                .map(|id| map.get(id.as_str()).copied().ok_or_else(|| bad(p, format!("no truth for id {id:?}"))))
                .collect::<Result<Vec<_>>>()?;
            Some(truth)
        }
        None => None,
    };
    let trusted = index.labeled(read_labels(&paths.trusted)?)?;
    let validation = match &paths.validation {
        Some(p) => Some(index.labeled(read_labels(p)?)?),
        None => None,
    };
    Ok(Dataset { untrusted: UntrustedDataset { ids, features, annotations, truth }, trusted, validation })
}

/// Writes the standard file set into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    let mut ids = data.untrusted.ids.clone();
    let mut features = data.untrusted.features.clone();
    for set in std::iter::once(&data.trusted).chain(data.validation.as_ref()) {
        ids.extend(set.ids());
        features = features.vstack(&set.features())?;
    }
    write_features(&dir.join(FEATURES_FILE), &ids, &features)?;
    write_annotations(&dir.join(ANNOTATIONS_FILE), &data.untrusted.ids, &data.untrusted.annotations)?;
    let t = &data.trusted;
    write_labels(&dir.join(TRUSTED_FILE), &t.ids(), &t.labels(), t.annotations.as_ref())?;
    if let Some(truth) = &data.untrusted.truth {
        write_labels(&dir.join(TRUTH_FILE), &data.untrusted.ids, truth, None)?;
    }
    if let Some(v) = &data.validation {
        write_labels(&dir.join(VALIDATION_FILE), &v.ids(), &v.labels(), v.annotations.as_ref())?;
    }
    Ok(())
}

/// Writes `id,p0..p{C-1}`.
pub fn write_colabels(path: &Path, ids: &[String], colabels: &SoftLabelMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..colabels.classes()).map(|k| format!("p{k}")));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (id, row) in ids.iter().zip(colabels.iter_rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_colabels(path: &Path) -> Result<(Vec<String>, SoftLabelMatrix)> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    check_header(path, &header, &["id"])?;
    let c = prefixed_columns(path, &header, 1, "p")?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        ids.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            data.push(v.trim().parse::<f64>().map_err(|_| bad(path, format!("bad probability {v:?}")))?);
        }
    }
    let m = Matrix::from_vec(ids.len(), c, data)?;
    Ok((ids, SoftLabelMatrix::new(m)?))
}
