use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use eventcube::sae::{self, ArchSpec};
use eventcube_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ec_last_error_message()) }.to_string_lossy().into_owned()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn ramp_series(n: usize) -> *mut EcSeries {
    let t: Vec<f64> = (0..n).map(|i| i as f64 * 1.5).collect();
    let e: Vec<f64> = (0..n).map(|i| 500.0 + 37.0 * (i % 50) as f64).collect();
    let id = CString::new("ramp").unwrap();
    let mut s = ptr::null_mut();
    let st = unsafe { ec_series_new(t.as_ptr(), e.as_ptr(), n, id.as_ptr(), &mut s) };
    assert_eq!(st, EcStatus::Ok, "{}", last_error());
    s
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(ec_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn tensorize_save_load_encode() {
    let dir = tempfile::tempdir().unwrap();
    let s = ramp_series(400);
    assert_eq!(unsafe { ec_series_len(s) }, 400);

    let mut cube = ptr::null_mut();
    assert_eq!(unsafe { ec_tensorize(s, 8, 4, 4, &mut cube) }, EcStatus::Ok);
    unsafe { ec_series_free(s) };
    assert_eq!(unsafe { ec_tensor_ndim(cube) }, 3);
    assert_eq!(unsafe { ec_tensor_is_cube(cube) }, 1);
    let n = unsafe { ec_tensor_len(cube) };
    assert_eq!(n, 128);
    let mut dims = [0usize; 3];
    assert_eq!(unsafe { ec_tensor_dims(cube, dims.as_mut_ptr(), 3) }, EcStatus::Ok);
    assert_eq!(dims, [8, 4, 4]);
    let mut values = vec![0.0; n];
    assert_eq!(unsafe { ec_tensor_values(cube, values.as_mut_ptr(), n) }, EcStatus::Ok);
    assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let tpath = cpath(&dir.path().join("ramp.etdt"));
    assert_eq!(unsafe { ec_tensor_save(cube, tpath.as_ptr()) }, EcStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ec_tensor_load(tpath.as_ptr(), &mut back) }, EcStatus::Ok);
    let mut reread = vec![0.0; n];
    unsafe { ec_tensor_values(back, reread.as_mut_ptr(), n) };
    for (a, b) in values.iter().zip(&reread) {
        assert_eq!(*a as f32 as f64, *b);
    }

    let arch = ArchSpec::cube_dense([8, 4, 4], 5);
    let model = sae::init_model(&arch, 3).unwrap();
    let mpath = dir.path().join("m.saec");
    sae::save_checkpoint(&model, None, None, &mpath).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { ec_model_load(cpath(&mpath).as_ptr(), &mut m) }, EcStatus::Ok);
    assert_eq!(unsafe { ec_model_latent_dim(m) }, 5);

    let mut z = [0.0; 5];
    assert_eq!(unsafe { ec_model_encode(m, back, z.as_mut_ptr(), 5) }, EcStatus::Ok);
    let expected = model.encode(&eventcube::tensorize::read_tensor(&dir.path().join("ramp.etdt")).unwrap()).unwrap();
    assert_eq!(z.to_vec(), expected.z);

    assert_eq!(unsafe { ec_model_encode(m, back, z.as_mut_ptr(), 4) }, EcStatus::BufferTooSmall);

    let mut map = ptr::null_mut();
    let s = ramp_series(400);
    assert_eq!(unsafe { ec_tensorize(s, 8, 4, 0, &mut map) }, EcStatus::Ok);
    assert_eq!(unsafe { ec_tensor_ndim(map) }, 2);
    assert_eq!(unsafe { ec_model_encode(m, map, z.as_mut_ptr(), 5) }, EcStatus::ArchMismatch);
    assert!(!last_error().is_empty());

    unsafe {
        ec_series_free(s);
        ec_tensor_free(map);
        ec_tensor_free(cube);
        ec_tensor_free(back);
        ec_model_free(m);
    }
}

#[test]
fn null_handles_are_reported() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ec_tensorize(ptr::null(), 4, 4, 0, &mut out) }, EcStatus::NullPointer);
    assert!(out.is_null());
    assert!(last_error().contains("series"));
    assert_eq!(unsafe { ec_tensor_load(ptr::null(), &mut out) }, EcStatus::NullPointer);
    assert_eq!(unsafe { ec_series_len(ptr::null()) }, 0);
    assert_eq!(unsafe { ec_tensor_len(ptr::null()) }, 0);
    assert_eq!(unsafe { ec_model_latent_dim(ptr::null()) }, 0);
    unsafe {
        ec_series_free(ptr::null_mut());
        ec_tensor_free(ptr::null_mut());
        ec_model_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let id = CString::new("x").unwrap();
    let mut s = ptr::null_mut();

    let t = [0.0, 1.0, 2.0];
    let e = [100.0, -1.0, 50.0];
    assert_eq!(unsafe { ec_series_new(t.as_ptr(), e.as_ptr(), 3, id.as_ptr(), &mut s) }, EcStatus::InvalidData);
    let e = [100.0, f64::NAN, 50.0];
    assert_eq!(unsafe { ec_series_new(t.as_ptr(), e.as_ptr(), 3, id.as_ptr(), &mut s) }, EcStatus::InvalidData);
    assert!(s.is_null());

    let missing = cpath(&dir.path().join("nope.etdt"));
    let mut tensor = ptr::null_mut();
    assert_eq!(unsafe { ec_tensor_load(missing.as_ptr(), &mut tensor) }, EcStatus::Io);

    let junk = dir.path().join("junk.etdt");
    std::fs::write(&junk, b"not a tensor at all").unwrap();
    assert_eq!(unsafe { ec_tensor_load(cpath(&junk).as_ptr(), &mut tensor) }, EcStatus::Format);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ec_model_load(cpath(&junk).as_ptr(), &mut model) }, EcStatus::Format);

    let s = ramp_series(100);
    assert_eq!(unsafe { ec_tensorize(s, 0, 4, 0, &mut tensor) }, EcStatus::InvalidArgument);
    assert_eq!(unsafe { ec_tensorize(s, 4, 4, 0, &mut tensor) }, EcStatus::Ok);
    let mut dims = [0usize; 1];
    assert_eq!(unsafe { ec_tensor_dims(tensor, dims.as_mut_ptr(), 1) }, EcStatus::BufferTooSmall);
    unsafe {
        ec_series_free(s);
        ec_tensor_free(tensor);
    }
}

#[test]
fn csv_loader_uses_file_stem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("src42.csv");
    let mut text = String::from("time,energy\n");
    for i in 0..20 {
        text.push_str(&format!("{},{}\n", i as f64 * 0.5, 300 + 10 * i));
    }
    std::fs::write(&path, text).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { ec_series_load_csv(cpath(&path).as_ptr(), &mut s) }, EcStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { ec_series_len(s) }, 20);
    unsafe { ec_series_free(s) };
}

fn header() -> (std::path::PathBuf, String) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/eventcube.h");
    let text = std::fs::read_to_string(&path).unwrap();
    (path, text)
}

#[test]
fn header_declares_every_export() {
    let (_, h) = header();
    for name in [
        "ec_version",
        "ec_last_error_message",
        "ec_series_new",
        "ec_series_load_csv",
        "ec_series_len",
        "ec_series_free",
        "ec_tensorize",
        "ec_tensor_load",
        "ec_tensor_save",
        "ec_tensor_ndim",
        "ec_tensor_dims",
        "ec_tensor_len",
        "ec_tensor_values",
        "ec_tensor_is_cube",
        "ec_tensor_free",
        "ec_model_load",
        "ec_model_latent_dim",
        "ec_model_encode",
        "ec_model_free",
        "typedef struct EcModel EcModel",
        "EC_STATUS_OK = 0",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let (path, _) = header();
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&path)
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
}
