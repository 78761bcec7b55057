use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fixclr_ffi::*;

fn last_error() -> String {
    let p = fixclr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn tiny_batch() -> *mut FixclrBatch {
    let rows = [unit(&[1.0, 0.2, 0.0]), unit(&[0.1, 1.0, 0.3]), unit(&[0.5, 0.5, 1.0]), unit(&[-1.0, 0.4, 0.2])];
    let flat: Vec<f64> = rows.concat();
    let domains = [0usize, 0, 1, 1];
    let classes = [0usize, 1, 0, 1];
    let mut b = ptr::null_mut();
    let s = unsafe { fixclr_batch_new(flat.as_ptr(), 4, 3, domains.as_ptr(), classes.as_ptr(), ptr::null(), &mut b) };
    assert_eq!(s, FixclrStatus::Ok);
    b
}

#[test]
fn loss_matches_oracle_and_gradient_has_batch_shape() {
    let b = tiny_batch();
    assert_eq!(unsafe { fixclr_batch_len(b) }, 4);
    let cfg = fixclr_loss_config_default();
    let (mut v, mut o, mut skipped) = (0.0, 0.0, 9u8);
    let mut grad = vec![0.0; 12];
    unsafe {
        assert_eq!(fixclr_loss(b, &cfg, &mut v, grad.as_mut_ptr(), &mut skipped), FixclrStatus::Ok);
        assert_eq!(fixclr_loss_oracle(b, ptr::null(), &mut o), FixclrStatus::Ok);
        fixclr_batch_free(b);
    }
    assert_eq!(skipped, 0);
    assert!(((v - o) / o.abs().max(1e-300)).abs() < 1e-9, "{v} vs {o}");
    assert!(grad.iter().any(|g| *g != 0.0));
}

#[test]
fn errors_map_to_status_codes() {
    let mut b = ptr::null_mut();
    let zero = [0.0f64; 3];
    let ids = [0usize];
    let s = unsafe { fixclr_batch_new(zero.as_ptr(), 1, 3, ids.as_ptr(), ids.as_ptr(), ptr::null(), &mut b) };
    assert_eq!(s, FixclrStatus::Domain);
    assert!(b.is_null());
    assert!(!last_error().is_empty());

    let mut v = 0.0;
    assert_eq!(unsafe { fixclr_loss(ptr::null(), ptr::null(), &mut v, ptr::null_mut(), ptr::null_mut()) }, FixclrStatus::NullPointer);
    assert!(last_error().contains("batch"));

    let mut lr = 0.0;
    assert_eq!(unsafe { fixclr_cosine_lr(0, 0, 0.003, &mut lr) }, FixclrStatus::Domain);

    let missing = CString::new("/nonexistent/fixclr.ds").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { fixclr_dataset_load(missing.as_ptr(), &mut ds) }, FixclrStatus::Io);

    let bad = CString::new("{\"num_domains\": 2, \"bogus\": 1}").unwrap();
    assert_eq!(unsafe { fixclr_dataset_generate(bad.as_ptr(), &mut ds) }, FixclrStatus::Config);
}

#[test]
fn cosine_lr_endpoints() {
    let (mut a, mut z) = (0.0, 1.0);
    unsafe {
        assert_eq!(fixclr_cosine_lr(0, 100, 0.003, &mut a), FixclrStatus::Ok);
        assert_eq!(fixclr_cosine_lr(100, 100, 0.003, &mut z), FixclrStatus::Ok);
    }
    assert_eq!(a, 0.003);
    assert_eq!(z, 0.0);
}

#[test]
fn dataset_round_trip_and_model_forward() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("bench.ds").to_str().unwrap()).unwrap();
    let mut ds = ptr::null_mut();
    unsafe {
        assert_eq!(fixclr_dataset_generate_benchmark(0, &mut ds), FixclrStatus::Ok);
        assert_eq!(fixclr_dataset_num_domains(ds), 4);
        assert_eq!(fixclr_dataset_num_classes(ds), 5);
        assert_eq!(fixclr_dataset_len(ds), 2000);
        let dim = fixclr_dataset_feature_dim(ds);
        assert_eq!(fixclr_dataset_save(ds, path.as_ptr()), FixclrStatus::Ok);

        let mut back = ptr::null_mut();
        assert_eq!(fixclr_dataset_load(path.as_ptr(), &mut back), FixclrStatus::Ok);
        let (mut x, mut y) = (vec![0.0; dim], vec![0.0; dim]);
        let (mut d0, mut c0, mut d1, mut c1) = (0, 0, 0, 0);
        assert_eq!(fixclr_dataset_sample(ds, 1234, x.as_mut_ptr(), &mut d0, &mut c0), FixclrStatus::Ok);
        assert_eq!(fixclr_dataset_sample(back, 1234, y.as_mut_ptr(), &mut d1, &mut c1), FixclrStatus::Ok);
        assert_eq!((x.clone(), d0, c0), (y, d1, c1));
        assert_eq!(fixclr_dataset_sample(ds, 2000, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), FixclrStatus::InvalidArgument);

        let mut m = ptr::null_mut();
        assert_eq!(fixclr_model_new(dim, 5, 7, &mut m), FixclrStatus::Ok);
        let (k, p) = (fixclr_model_num_classes(m), fixclr_model_projection_dim(m));
        assert_eq!(fixclr_model_input_dim(m), dim);
        let mut logits = vec![f64::NAN; k];
        let mut proj = vec![f64::NAN; p];
        assert_eq!(fixclr_model_forward(m, x.as_ptr(), 1, dim, logits.as_mut_ptr(), proj.as_mut_ptr()), FixclrStatus::Ok);
        assert!(logits.iter().all(|v| v.is_finite()));
        let norm: f64 = proj.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(fixclr_model_forward(m, x.as_ptr(), 1, dim + 1, logits.as_mut_ptr(), ptr::null_mut()), FixclrStatus::Domain);

        fixclr_model_free(m);
        fixclr_dataset_free(back);
        fixclr_dataset_free(ds);
        fixclr_dataset_free(ptr::null_mut());
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fixclr.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(h.contains(&format!("{name}(")), "{name} missing from header");
    }
    for t in ["typedef struct FixclrBatch FixclrBatch;", "FIXCLR_STATUS_OK = 0", "FIXCLR_STATUS_DATA = 4"] {
        assert!(h.contains(t), "{t}");
    }
}

// deps/<test-binary> sits one level below the profile directory.
fn static_lib() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("libfixclr_ffi.a")
}

#[test]
fn c_program_links_against_static_library() {
    let lib = static_lib();
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("cc available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("ok"), "{stdout}");
}
