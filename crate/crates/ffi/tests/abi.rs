use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use hiersr_ffi::*;

fn volume(dims: &[usize], data: &[f32]) -> *mut HsrVolume {
    let mut v = ptr::null_mut();
    let s = unsafe { hsr_volume_new(dims.as_ptr(), dims.len(), data.as_ptr(), data.len(), &mut v) };
    assert_eq!(s, HsrStatus::Ok);
    v
}

fn last_error() -> String {
    let p = hsr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn pipeline_through_the_abi() {
    let n = 32;
    let data: Vec<f32> = (0..n * n)
        .map(|i| {
            if (i % n) < n / 2 {
                0.25
            } else {
                ((i / n + i % n) % 2) as f32
            }
        })
        .collect();
    let v = volume(&[n, n], &data);
    let cfg = HsrBuildConfig {
        epsilon: 0.01,
        min_chunk: 2,
        min_level: 0,
        max_level: 3,
        downscaler: HsrDownscaler::MeanPool,
    };
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(hsr_tree_build(v, &cfg, &mut t), HsrStatus::Ok);
        assert_eq!(hsr_tree_max_level(t), 3);
        assert!(hsr_tree_reduction_factor(t) > 1.0);

        let mut lr = ptr::null_mut();
        assert_eq!(hsr_hierarchical_downscale(t, &mut lr), HsrStatus::Ok);
        let mut dims = [0usize; 3];
        assert_eq!(hsr_volume_dims(lr, dims.as_mut_ptr(), 3), HsrStatus::Ok);
        assert_eq!(&dims[..hsr_volume_ndim(lr)], &[4, 4]);

        let mut up = ptr::null_mut();
        assert_eq!(
            hsr_hierarchical_upscale(lr, t, HsrBackend::Linear, &mut up),
            HsrStatus::Ok
        );
        let mut back = vec![0f32; hsr_volume_len(up)];
        assert_eq!(
            hsr_volume_copy_data(up, back.as_mut_ptr(), back.len()),
            HsrStatus::Ok
        );
        // The checker half is stored at level 0 and must come back exactly.
        for i in (0..n * n).filter(|i| i % n >= n / 2) {
            assert_eq!(back[i], data[i]);
        }

        let mut bw = ptr::null_mut();
        assert_eq!(
            hsr_blockwise_upscale(t, HsrBackend::Nearest, &mut bw),
            HsrStatus::Ok
        );
        let (mut p, mut s) = (0.0, 0.0);
        assert_eq!(hsr_psnr(v, up, 1.0, &mut p), HsrStatus::Ok);
        assert_eq!(hsr_ssim(v, up, 1.0, &mut s), HsrStatus::Ok);
        assert!(p > 20.0 && s > 0.5, "{p} {s}");

        let dir = tempfile::tempdir().unwrap();
        let tp = CString::new(dir.path().join("t.sroc").to_str().unwrap()).unwrap();
        let vp = CString::new(dir.path().join("v.hvol").to_str().unwrap()).unwrap();
        assert_eq!(hsr_tree_write(t, tp.as_ptr()), HsrStatus::Ok);
        assert_eq!(hsr_volume_write(up, vp.as_ptr()), HsrStatus::Ok);
        let (mut t2, mut up2) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(hsr_tree_read(tp.as_ptr(), &mut t2), HsrStatus::Ok);
        assert_eq!(hsr_volume_read(vp.as_ptr(), &mut up2), HsrStatus::Ok);
        assert_eq!(hsr_tree_reduction_factor(t2), hsr_tree_reduction_factor(t));
        assert_eq!(hsr_psnr(up, up2, 1.0, &mut p), HsrStatus::Ok);
        assert_eq!(p, f64::INFINITY);

        for h in [v, lr, up, bw, up2] {
            hsr_volume_free(h);
        }
        hsr_tree_free(t);
        hsr_tree_free(t2);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut out = ptr::null_mut();
        let dims = [2usize, 2];
        let data = [1.0f32, f32::NAN, 0.0, 0.0];
        assert_eq!(
            hsr_volume_new(dims.as_ptr(), 2, data.as_ptr(), 4, &mut out),
            HsrStatus::InvalidArgument
        );
        assert!(out.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(
            hsr_volume_new(dims.as_ptr(), 2, data.as_ptr(), 3, &mut out),
            HsrStatus::ShapeMismatch
        );
        assert_eq!(
            hsr_volume_new(ptr::null(), 2, data.as_ptr(), 4, &mut out),
            HsrStatus::NullPointer
        );

        let missing = CString::new("/nonexistent/t.sroc").unwrap();
        let mut t = ptr::null_mut();
        assert_eq!(hsr_tree_read(missing.as_ptr(), &mut t), HsrStatus::Io);

        let v = volume(&[6, 6], &[0.0; 36]);
        let cfg = HsrBuildConfig {
            epsilon: 0.0,
            min_chunk: 2,
            min_level: 0,
            max_level: 2,
            downscaler: HsrDownscaler::Subsample,
        };
        assert_eq!(hsr_tree_build(v, &cfg, &mut t), HsrStatus::ShapeMismatch);
        assert!(last_error().contains("divisible") || !last_error().is_empty());
        let bad = HsrBuildConfig {
            min_chunk: 1,
            ..cfg
        };
        assert_eq!(hsr_tree_build(v, &bad, &mut t), HsrStatus::InvalidArgument);

        let mut buf = [0f32; 3];
        assert_eq!(
            hsr_volume_copy_data(v, buf.as_mut_ptr(), 3),
            HsrStatus::ShapeMismatch
        );
        assert_eq!(
            hsr_volume_copy_data(v, ptr::null_mut(), 36),
            HsrStatus::NullPointer
        );

        // Success clears the message.
        let mut d = [0usize; 2];
        assert_eq!(hsr_volume_dims(v, d.as_mut_ptr(), 2), HsrStatus::Ok);
        assert!(hsr_last_error().is_null());
        hsr_volume_free(v);
        hsr_volume_free(ptr::null_mut());
        assert_eq!(hsr_volume_len(ptr::null()), 0);
    }
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    // target/<profile>/deps/abi-xxxx -> target/<profile>
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libhiersr_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "hiersr.h"
int main(void) {
    size_t dims[3] = {16, 16, 16};
    float data[4096];
    for (int i = 0; i < 4096; i++) data[i] = 0.5f;
    HsrVolume *v = NULL;
    if (hsr_volume_new(dims, 3, data, 4096, &v) != HSR_STATUS_OK) return 1;
    HsrBuildConfig cfg = {0.0, 2, 0, 2, HSR_DOWNSCALER_MEAN_POOL};
    HsrTree *t = NULL;
    if (hsr_tree_build(v, &cfg, &t) != HSR_STATUS_OK) return 2;
    printf("%.1f\n", hsr_tree_reduction_factor(t));
    HsrVolume *bad = NULL;
    if (hsr_volume_new(dims, 3, data, 7, &bad) != HSR_STATUS_SHAPE_MISMATCH) return 3;
    if (hsr_last_error() == NULL) return 4;
    hsr_tree_free(t);
    hsr_volume_free(v);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "64.0");
}
