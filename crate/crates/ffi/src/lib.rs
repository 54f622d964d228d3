//! C ABI over the colabel library.
//!
//! Every fallible function returns a [`ColabelStatus`]; on failure the
//! thread's last error message is available from [`colabel_last_error`].
//! Handles are opaque and must be released with their `_free` function.
//! Array arguments are row-major `double`/`int64_t` buffers whose sizes are
//! given by the accompanying dimensions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use colabel::aggregator::{nb_posterior, ConfusionMatrixSet};
use colabel::calibration::{expected_calibration_error, fit_multiclass_calibrator, CalibrationMap};
use colabel::classifier::{predict_proba, ClassifierParams};
use colabel::combiner::combine;
use colabel::data::{ClassPrior, SoftLabelMatrix};
use colabel::{Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColabelStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Parse = 5,
    Uncalibrated = 6,
    Internal = 7,
}

/// Naive-Bayes confusion matrices, one `classes x classes` matrix per annotator.
pub struct ColabelConfusionSet(ConfusionMatrixSet);

/// Per-class isotonic calibration maps.
pub struct ColabelCalibrator(CalibrationMap);

/// A trained data classifier loaded from a JSON checkpoint.
pub struct ColabelClassifier(ClassifierParams);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ColabelStatus {
    match e {
        Error::Shape(_) => ColabelStatus::ShapeMismatch,
        Error::Io { .. } => ColabelStatus::Io,
        Error::Json(_) | Error::Csv { .. } => ColabelStatus::Parse,
        Error::Uncalibrated(_) => ColabelStatus::Uncalibrated,
        Error::NonFiniteLoss { .. } => ColabelStatus::Internal,
        _ => ColabelStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, recording any error or panic as the last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ColabelStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ColabelStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            ColabelStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            ColabelStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or point to `len` readable elements.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be null or point to `len` writable elements.
unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<Matrix, Failure> {
    Ok(Matrix::from_vec(rows, cols, data.to_vec())?)
}

fn parse_labels(raw: &[i64], classes: usize) -> Result<Vec<usize>, Failure> {
    raw.iter()
        .map(|&l| {
            usize::try_from(l)
                .ok()
                .filter(|&v| v < classes)
                .ok_or_else(|| Failure::Lib(Error::InvalidInput(format!("label {l} outside 0..{classes}"))))
        })
        .collect()
}

fn checked_len(a: usize, b: usize) -> Result<usize, Failure> {
    a.checked_mul(b).ok_or_else(|| Failure::Lib(Error::InvalidInput("array size overflows".into())))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn colabel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a confusion set from `annotators * classes * classes` row-stochastic values.
///
/// # Safety
/// `data` must hold `annotators * classes * classes` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn colabel_confusion_set_new(
    data: *const f64,
    annotators: usize,
    classes: usize,
    out: *mut *mut ColabelConfusionSet,
) -> ColabelStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let per = checked_len(classes, classes)?;
        let values = input(data, checked_len(annotators, per)?, "data")?;
        let matrices = values
            .chunks(per.max(1))
            .take(annotators)
            .map(|chunk| matrix(chunk, classes, classes))
            .collect::<Result<Vec<_>, _>>()?;
        let set = ConfusionMatrixSet::new(matrices)?;
        *out = Box::into_raw(Box::new(ColabelConfusionSet(set)));
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle from [`colabel_confusion_set_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn colabel_confusion_set_free(set: *mut ColabelConfusionSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Naive-Bayes posterior of one annotation row. `row` holds `annotators`
/// labels with `-1` for missing; `prior` and `out` hold `classes` values.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn colabel_nb_posterior(
    set: *const ColabelConfusionSet,
    prior: *const f64,
    row: *const i64,
    out: *mut f64,
) -> ColabelStatus {
    guard(|| {
        let set = set.as_ref().ok_or(Failure::Null("set"))?;
        let classes = set.0.classes();
        let prior = ClassPrior::new(input(prior, classes, "prior")?.to_vec())?;
        let cells = input(row, set.0.annotators(), "row")?
            .iter()
            .map(|&l| match l {
                -1 => Ok(None),
                l if l >= 0 => Ok(Some(l as usize)),
                l => Err(Failure::Lib(Error::InvalidInput(format!("annotation {l}")))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let post = nb_posterior(&cells, &set.0, &prior)?;
        output(out, classes, "out")?.copy_from_slice(&post.probs);
        Ok(())
    })
}

/// Fuses two class-posterior estimates under `prior`. `degenerate`, if not
/// null, receives 1 when the inputs had disjoint support and the uniform
/// fallback was used.
///
/// # Safety
/// `p_d`, `p_l`, `prior` and `out` must hold `classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn colabel_combine(
    p_d: *const f64,
    p_l: *const f64,
    prior: *const f64,
    classes: usize,
    out: *mut f64,
    degenerate: *mut i32,
) -> ColabelStatus {
    guard(|| {
        if classes == 0 {
            return Err(Failure::Lib(Error::InvalidInput("zero classes".into())));
        }
        let prior = ClassPrior::new(input(prior, classes, "prior")?.to_vec())?;
        for (p, name) in [(p_d, "p_d"), (p_l, "p_l")] {
            colabel::data::check_distribution(input(p, classes, name)?)
                .map_err(|e| Failure::Lib(Error::InvalidInput(format!("{name}: {e}"))))?;
        }
        let post = combine(input(p_d, classes, "p_d")?, input(p_l, classes, "p_l")?, &prior);
        output(out, classes, "out")?.copy_from_slice(&post.probs);
        if !degenerate.is_null() {
            *degenerate = i32::from(post.degenerate);
        }
        Ok(())
    })
}

/// Fits per-class isotonic calibration from `n x classes` predictions and
/// `n` labels.
///
/// # Safety
/// `preds` must hold `n * classes` doubles, `labels` `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn colabel_calibrator_fit(
    preds: *const f64,
    labels: *const i64,
    n: usize,
    classes: usize,
    out: *mut *mut ColabelCalibrator,
) -> ColabelStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let p = SoftLabelMatrix::new(matrix(input(preds, checked_len(n, classes)?, "preds")?, n, classes)?)?;
        let y = parse_labels(input(labels, n, "labels")?, classes)?;
        let map = fit_multiclass_calibrator(&p, &y)?;
        *out = Box::into_raw(Box::new(ColabelCalibrator(map)));
        Ok(())
    })
}

/// Calibrates `n` prediction rows into `out` (same shape).
///
/// # Safety
/// `preds` and `out` must hold `n * classes` doubles for the calibrator's class count.
#[no_mangle]
pub unsafe extern "C" fn colabel_calibrator_apply(
    cal: *const ColabelCalibrator,
    preds: *const f64,
    n: usize,
    out: *mut f64,
) -> ColabelStatus {
    guard(|| {
        let cal = cal.as_ref().ok_or(Failure::Null("calibrator"))?;
        let classes = cal.0.classes.len();
        let len = checked_len(n, classes)?;
        let p = SoftLabelMatrix::new(matrix(input(preds, len, "preds")?, n, classes)?)?;
        let calibrated = cal.0.calibrate(&p)?;
        output(out, len, "out")?.copy_from_slice(calibrated.as_matrix().as_slice());
        Ok(())
    })
}

/// # Safety
/// `cal` must be null or a handle from [`colabel_calibrator_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn colabel_calibrator_free(cal: *mut ColabelCalibrator) {
    if !cal.is_null() {
        drop(Box::from_raw(cal));
    }
}

/// Expected calibration error in percent over `bins` equal-width bins.
///
/// # Safety
/// `preds` must hold `n * classes` doubles and `labels` `n` values.
#[no_mangle]
pub unsafe extern "C" fn colabel_ece(
    preds: *const f64,
    labels: *const i64,
    n: usize,
    classes: usize,
    bins: usize,
    out_percent: *mut f64,
) -> ColabelStatus {
    guard(|| {
        let p = SoftLabelMatrix::new(matrix(input(preds, checked_len(n, classes)?, "preds")?, n, classes)?)?;
        let y = parse_labels(input(labels, n, "labels")?, classes)?;
        let ece = expected_calibration_error(&p, &y, bins)?;
        *out_percent.as_mut().ok_or(Failure::Null("out_percent"))? = ece;
        Ok(())
    })
}

/// Loads a classifier checkpoint written by `colabel train`.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn colabel_classifier_load(path: *const c_char, out: *mut *mut ColabelClassifier) -> ColabelStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::Lib(Error::InvalidInput("path is not UTF-8".into())))?;
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Lib(Error::Io { path: path.into(), source: e }))?;
        let params: ClassifierParams = serde_json::from_str(&text).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(ColabelClassifier(params)));
        Ok(())
    })
}

/// Class probabilities for `n` rows of `dim` features into `out` (`n x classes`).
///
/// # Safety
/// `features` must hold `n * dim` doubles and `out` `n * classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn colabel_classifier_predict(
    clf: *const ColabelClassifier,
    features: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
) -> ColabelStatus {
    guard(|| {
        let clf = clf.as_ref().ok_or(Failure::Null("classifier"))?;
        if dim != clf.0.feature_dim() {
            return Err(Failure::Lib(Error::Shape(format!(
                "classifier expects {} features, got {dim}",
                clf.0.feature_dim()
            ))));
        }
        let x = matrix(input(features, checked_len(n, dim)?, "features")?, n, dim)?;
        let p = predict_proba(&clf.0, &x)?;
        output(out, checked_len(n, clf.0.classes())?, "out")?.copy_from_slice(p.as_matrix().as_slice());
        Ok(())
    })
}

/// # Safety
/// `clf` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn colabel_classifier_classes(clf: *const ColabelClassifier) -> usize {
    clf.as_ref().map_or(0, |c| c.0.classes())
}

/// # Safety
/// `clf` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn colabel_classifier_feature_dim(clf: *const ColabelClassifier) -> usize {
    clf.as_ref().map_or(0, |c| c.0.feature_dim())
}

/// # Safety
/// `clf` must be null or a handle from [`colabel_classifier_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn colabel_classifier_free(clf: *mut ColabelClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}
