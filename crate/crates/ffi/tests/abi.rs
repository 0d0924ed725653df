use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dermforge::checkpoint::{class_codes, save_checkpoint, Checkpoint};
use dermforge::dataset::NormStats;
use dermforge::nn::build_lesion_model;
use dermforge::TrainConfig;
use dermforge_ffi::*;

fn checkpoint_file(dir: &std::path::Path) -> PathBuf {
    let (spec, params) = build_lesion_model(5).unwrap();
    let cp = Checkpoint {
        spec,
        params,
        norm: NormStats {
            mean: [0.6, 0.5, 0.5],
            std: [0.2, 0.2, 0.2],
        },
        config: TrainConfig::default(),
        epoch: 1,
        best_val_loss: 1.0,
        classes: class_codes(),
    };
    let path = dir.join("model.dfn");
    save_checkpoint(&cp, &path).unwrap();
    path
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(df_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn load_predict_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(checkpoint_file(dir.path()).to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { df_model_load(path.as_ptr(), &mut model) },
        DfStatus::Ok
    );
    assert!(!model.is_null());

    let pixels: Vec<u8> = (0..40 * 30 * 3).map(|i| (i * 7 % 256) as u8).collect();
    let mut probs = [0f32; 7];
    let mut label = 99u32;
    let st = unsafe {
        df_predict_rgb(
            model,
            pixels.as_ptr(),
            40,
            30,
            probs.as_mut_ptr(),
            &mut label,
        )
    };
    assert_eq!(st, DfStatus::Ok, "{}", last_error());
    assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    assert!(label < 7);
    let best = (0..7).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
    assert_eq!(label as usize, best);

    let mut again = [0f32; 7];
    unsafe {
        df_predict_rgb(
            model,
            pixels.as_ptr(),
            40,
            30,
            again.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(probs, again);

    let st = unsafe {
        df_predict_rgb(
            model,
            pixels.as_ptr(),
            0,
            30,
            probs.as_mut_ptr(),
            &mut label,
        )
    };
    assert_eq!(st, DfStatus::InvalidArgument);
    assert!(!last_error().is_empty());

    let missing = CString::new(dir.path().join("nope.png").to_str().unwrap()).unwrap();
    let st = unsafe { df_predict_file(model, missing.as_ptr(), probs.as_mut_ptr(), &mut label) };
    assert_eq!(st, DfStatus::Decode, "{}", last_error());
    unsafe { df_model_free(model) };
}

#[test]
fn load_errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ptr::null_mut();
    let missing = CString::new(dir.path().join("missing.dfn").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { df_model_load(missing.as_ptr(), &mut model) },
        DfStatus::Io
    );
    assert!(model.is_null());

    let good = checkpoint_file(dir.path());
    let mut bytes = std::fs::read(&good).unwrap();
    bytes[0] = b'Z';
    let bad = dir.path().join("bad.dfn");
    std::fs::write(&bad, &bytes).unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { df_model_load(bad.as_ptr(), &mut model) },
        DfStatus::Checkpoint
    );

    bytes[0] = b'D';
    bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
    let future = dir.path().join("future.dfn");
    std::fs::write(&future, &bytes).unwrap();
    let future = CString::new(future.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { df_model_load(future.as_ptr(), &mut model) },
        DfStatus::Version
    );
    assert!(last_error().contains('9'));

    assert_eq!(
        unsafe { df_model_load(ptr::null(), &mut model) },
        DfStatus::NullPointer
    );
    assert_eq!(
        unsafe { df_model_load(bad.as_ptr(), ptr::null_mut()) },
        DfStatus::NullPointer
    );
    unsafe { df_model_free(ptr::null_mut()) };
}

#[test]
fn auc_helper() {
    let scores = [0.9, 0.4, 0.7, 0.1];
    let truth = [1u8, 1, 0, 0];
    let mut auc = 0.0;
    assert_eq!(
        unsafe { df_auc(scores.as_ptr(), truth.as_ptr(), 4, &mut auc) },
        DfStatus::Ok
    );
    assert!((auc - 0.75).abs() < 1e-12);
    let one_class = [1u8; 4];
    assert_eq!(
        unsafe { df_auc(scores.as_ptr(), one_class.as_ptr(), 4, &mut auc) },
        DfStatus::InvalidArgument
    );
}

#[test]
fn static_strings() {
    assert_eq!(df_class_count(), 7);
    assert_eq!(
        unsafe { CStr::from_ptr(df_class_code(5)) }
            .to_str()
            .unwrap(),
        "nv"
    );
    assert_eq!(
        unsafe { CStr::from_ptr(df_class_name(4)) }
            .to_str()
            .unwrap(),
        "Melanoma"
    );
    assert!(df_class_name(100).is_null());
    let v = unsafe { CStr::from_ptr(df_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/dermforge.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "df_model_load",
        "df_model_free",
        "df_predict_file",
        "df_predict_rgb",
        "df_last_error",
        "df_auc",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
