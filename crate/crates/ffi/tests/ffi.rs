use std::ffi::{CStr, CString};
use std::ptr;

use colabel_ffi::*;

fn last_error() -> String {
    let p = colabel_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn nb_posterior_matches_hand_computation() {
    // annotator 0: 0.8 accurate; annotator 1: 0.6 accurate, binary, uniform prior
    let data = [0.8, 0.2, 0.2, 0.8, 0.6, 0.4, 0.4, 0.6];
    let mut set = ptr::null_mut();
    unsafe {
        assert_eq!(colabel_confusion_set_new(data.as_ptr(), 2, 2, &mut set), ColabelStatus::Ok);
        let prior = [0.5, 0.5];
        let mut out = [0.0; 2];
        let row = [0i64, 1];
        assert_eq!(colabel_nb_posterior(set, prior.as_ptr(), row.as_ptr(), out.as_mut_ptr()), ColabelStatus::Ok);
        // 0.8*0.4 vs 0.2*0.6
        assert!((out[0] - 0.32 / 0.44).abs() < 1e-12);
        let row = [-1i64, 1];
        assert_eq!(colabel_nb_posterior(set, prior.as_ptr(), row.as_ptr(), out.as_mut_ptr()), ColabelStatus::Ok);
        assert!((out[1] - 0.6).abs() < 1e-12);
        let row = [5i64, 1];
        assert_eq!(colabel_nb_posterior(set, prior.as_ptr(), row.as_ptr(), out.as_mut_ptr()), ColabelStatus::InvalidArgument);
        assert!(last_error().contains('5'));
        colabel_confusion_set_free(set);
    }
}

#[test]
fn confusion_set_rejects_bad_rows() {
    let data = [0.5, 0.6, 0.5, 0.5];
    let mut set = ptr::null_mut();
    let status = unsafe { colabel_confusion_set_new(data.as_ptr(), 1, 2, &mut set) };
    assert_ne!(status, ColabelStatus::Ok);
    assert!(set.is_null());
}

#[test]
fn combine_and_degenerate_flag() {
    let prior = [0.5, 0.5];
    let mut out = [0.0; 2];
    let mut degenerate = -1;
    unsafe {
        let st = colabel_combine([0.7, 0.3].as_ptr(), [0.6, 0.4].as_ptr(), prior.as_ptr(), 2, out.as_mut_ptr(), &mut degenerate);
        assert_eq!(st, ColabelStatus::Ok);
        assert!((out[0] - 0.42 / 0.54).abs() < 1e-12);
        assert_eq!(degenerate, 0);
        let st = colabel_combine([1.0, 0.0].as_ptr(), [0.0, 1.0].as_ptr(), prior.as_ptr(), 2, out.as_mut_ptr(), &mut degenerate);
        assert_eq!(st, ColabelStatus::Ok);
        assert_eq!(out, [0.5, 0.5]);
        assert_eq!(degenerate, 1);
        let st = colabel_combine(ptr::null(), [0.6, 0.4].as_ptr(), prior.as_ptr(), 2, out.as_mut_ptr(), ptr::null_mut());
        assert_eq!(st, ColabelStatus::NullPointer);
        assert!(last_error().contains("p_d"));
    }
}

#[test]
fn calibrator_round_trip_and_ece() {
    // 40 rows, class 0 predicted with confidence 0.9 but right only half the time
    let n = 40;
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        preds.extend([0.9, 0.1]);
        labels.push(i64::from(i % 2 == 0));
    }
    let mut cal = ptr::null_mut();
    let mut before = 0.0;
    let mut after = 0.0;
    let mut calibrated = vec![0.0; 2 * n];
    unsafe {
        assert_eq!(colabel_calibrator_fit(preds.as_ptr(), labels.as_ptr(), n, 2, &mut cal), ColabelStatus::Ok);
        assert_eq!(colabel_calibrator_apply(cal, preds.as_ptr(), n, calibrated.as_mut_ptr()), ColabelStatus::Ok);
        assert_eq!(colabel_ece(preds.as_ptr(), labels.as_ptr(), n, 2, 10, &mut before), ColabelStatus::Ok);
        assert_eq!(colabel_ece(calibrated.as_ptr(), labels.as_ptr(), n, 2, 10, &mut after), ColabelStatus::Ok);
        colabel_calibrator_free(cal);
    }
    assert!((calibrated[0] - 0.5).abs() < 1e-9);
    assert!((before - 40.0).abs() < 1e-9);
    assert!(after < 1e-9);
}

#[test]
fn classifier_checkpoint_load_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("checkpoint.json");
    let params = colabel::classifier::init_classifier(2, &[4], 3, colabel::Seed(3)).unwrap();
    std::fs::write(&path, serde_json::to_string(&params).unwrap()).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut clf = ptr::null_mut();
    let x = [0.5, -1.0, 2.0, 0.25];
    let mut out = [0.0; 6];
    unsafe {
        assert_eq!(colabel_classifier_load(c_path.as_ptr(), &mut clf), ColabelStatus::Ok);
        assert_eq!(colabel_classifier_classes(clf), 3);
        assert_eq!(colabel_classifier_feature_dim(clf), 2);
        assert_eq!(colabel_classifier_predict(clf, x.as_ptr(), 2, 2, out.as_mut_ptr()), ColabelStatus::Ok);
        assert_eq!(colabel_classifier_predict(clf, x.as_ptr(), 1, 4, out.as_mut_ptr()), ColabelStatus::ShapeMismatch);
        colabel_classifier_free(clf);
    }
    let expected = params.net.forward(&[0.5, -1.0]);
    assert_eq!(&out[..3], expected.as_slice());
    assert!((out[3..].iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut clf = ptr::null_mut();
    assert_eq!(unsafe { colabel_classifier_load(missing.as_ptr(), &mut clf) }, ColabelStatus::Io);
    assert!(clf.is_null());
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/colabel.h");
    assert!(std::fs::read_to_string(header).unwrap().contains("colabel_nb_posterior"));
    let Ok(status) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c", header]).status() else {
        return; // no C compiler on this machine
    };
    assert!(status.success());
}
