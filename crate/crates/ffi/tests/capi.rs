use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use mcv_core::gaussian::GaussianModel;
use mcv_core::rng::stream;
use mcv_ffi::*;

fn rows(n: usize, seed: u64, na_every: usize) -> (Vec<f64>, Vec<f64>) {
    let model = GaussianModel::reference(3, 0.5).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, (xi, yi)) in model.gen_joint(n, &mut stream(seed, &[])).into_iter().enumerate() {
        for (j, v) in xi.into_iter().enumerate() {
            x.push(if na_every > 0 && (i + j) % na_every == 0 { f64::NAN } else { v });
        }
        y.push(yi);
    }
    (x, y)
}

fn last_error() -> String {
    let p = mcv_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn fit_calibrate_predict_round_trip() {
    let (xt, yt) = rows(300, 1, 4);
    let (xc, yc) = rows(120, 2, 5);
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(mcv_pipeline_fit(xt.as_ptr(), yt.as_ptr(), 300, 3, 0.1, 7, &mut p), McvStatus::Ok);
        assert!(!p.is_null());
        assert_eq!(mcv_pipeline_dim(p), 3);

        let row = [0.5, f64::NAN, -0.2];
        let (mut lo, mut hi) = (0.0, 0.0);
        assert_eq!(mcv_pipeline_predict(p, row.as_ptr(), 3, McvMethod::Weighted, &mut lo, &mut hi), McvStatus::NotCalibrated);
        assert!(last_error().contains("calibrated"));

        assert_eq!(mcv_pipeline_calibrate(p, xc.as_ptr(), yc.as_ptr(), 120, 3), McvStatus::Ok);
        assert!(mcv_last_error_message().is_null());
        for m in [McvMethod::Split, McvMethod::MdaNested, McvMethod::Weighted, McvMethod::Arc] {
            assert_eq!(mcv_pipeline_predict(p, row.as_ptr(), 3, m, &mut lo, &mut hi), McvStatus::Ok);
            assert!(lo < hi, "{m:?}: [{lo}, {hi}]");
        }
        mcv_pipeline_free(p);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let (x, y) = rows(50, 3, 0);
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(mcv_pipeline_fit(ptr::null(), y.as_ptr(), 50, 3, 0.1, 0, &mut p), McvStatus::NullPointer);
        assert!(p.is_null());
        assert_eq!(mcv_pipeline_fit(x.as_ptr(), y.as_ptr(), 50, 3, 1.5, 0, &mut p), McvStatus::InvalidInput);
        assert!(last_error().contains("alpha"));
        assert_eq!(mcv_pipeline_fit(x.as_ptr(), y.as_ptr(), 50, 0, 0.1, 0, &mut p), McvStatus::InvalidInput);
        let mut bad = y.clone();
        bad[3] = f64::NAN;
        assert_eq!(mcv_pipeline_fit(x.as_ptr(), bad.as_ptr(), 50, 3, 0.1, 0, &mut p), McvStatus::InvalidInput);
        assert_eq!(mcv_pipeline_fit(x.as_ptr(), y.as_ptr(), 50, 3, 0.1, 0, ptr::null_mut()), McvStatus::NullPointer);

        let (mut lo, mut hi) = (0.0, 0.0);
        let row = [0.0; 3];
        assert_eq!(
            mcv_pipeline_predict(ptr::null(), row.as_ptr(), 3, McvMethod::Split, &mut lo, &mut hi),
            McvStatus::NullPointer
        );
        assert_eq!(mcv_pipeline_dim(ptr::null()), 0);
        mcv_pipeline_free(ptr::null_mut());
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let (xt, yt) = rows(200, 4, 4);
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(mcv_pipeline_fit(xt.as_ptr(), yt.as_ptr(), 200, 3, 0.1, 1, &mut p), McvStatus::Ok);
        let (xc, yc) = rows(40, 5, 0);
        assert_eq!(mcv_pipeline_calibrate(p, xc.as_ptr(), yc.as_ptr(), 30, 4), McvStatus::DimensionMismatch);
        mcv_pipeline_free(p);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(mcv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mcv.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["mcv_pipeline_fit", "mcv_pipeline_calibrate", "mcv_pipeline_predict", "mcv_pipeline_free", "mcv_last_error_message"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"mcv.h\"\nint main(void){McvPipeline*p=0;double lo,hi;\
         McvStatus s=mcv_pipeline_predict(p,0,0,MCV_METHOD_ARC,&lo,&hi);mcv_pipeline_free(p);return s==MCV_STATUS_OK;}\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
