use std::ffi::{CStr, CString};
use std::ptr;

use declab_ffi::*;

fn last_error() -> String {
    let n = unsafe { declab_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as std::ffi::c_char; n + 1];
    unsafe { declab_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(declab_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn log_sequence_round_trip() {
    let mut seq = ptr::null_mut();
    assert_eq!(unsafe { declab_seq_log(1024, &mut seq) }, DeclabStatus::Ok);
    let mut len = 0usize;
    assert_eq!(unsafe { declab_seq_len(seq, &mut len) }, DeclabStatus::Ok);
    assert_eq!(len, 32);

    let mut terms = vec![0.0; len];
    assert_eq!(
        unsafe { declab_seq_terms(seq, terms.as_mut_ptr(), len) },
        DeclabStatus::Ok
    );
    assert_eq!(terms, declab::seqgen::gen_log(1024).unwrap().terms);

    let mut small = vec![0.0; len - 1];
    assert_eq!(
        unsafe { declab_seq_terms(seq, small.as_mut_ptr(), len - 1) },
        DeclabStatus::OutOfRange
    );
    assert!(last_error().contains("buffer"));

    let mut valid = 0;
    assert_eq!(
        unsafe { declab_seq_validate(seq, &mut valid) },
        DeclabStatus::Ok
    );
    assert_eq!(valid, 1);
    unsafe { declab_seq_free(seq) };
}

#[test]
fn counts_agree_across_methods() {
    let a: Vec<f64> = (0..8).map(|i| (i * i) as f64 / 64.0).collect();
    let mut out = [(0u64, 0u64); 2];
    for (k, m) in [DeclabCountMethod::Brute, DeclabCountMethod::Mitm]
        .into_iter()
        .enumerate()
    {
        let (t, d) = &mut out[k];
        assert_eq!(
            unsafe { declab_count_solutions(a.as_ptr(), a.len(), 1e-9, m, t, d) },
            DeclabStatus::Ok
        );
    }
    assert_eq!(out[0], out[1]);
    assert!(out[0].0 >= out[0].1);
}

#[test]
fn null_pointers_are_reported() {
    let mut t = 0u64;
    let s = unsafe {
        declab_count_solutions(
            ptr::null(),
            3,
            0.0,
            DeclabCountMethod::Mitm,
            &mut t,
            ptr::null_mut(),
        )
    };
    assert_eq!(s, DeclabStatus::NullPointer);
    assert!(last_error().contains("terms"));
    assert_eq!(
        unsafe { declab_seq_log(256, ptr::null_mut()) },
        DeclabStatus::NullPointer
    );
    unsafe { declab_seq_free(ptr::null_mut()) };
}

#[test]
fn bad_arguments_are_reported() {
    let mut seq = ptr::null_mut();
    assert_eq!(
        unsafe { declab_seq_random(256, -1.0, 0, &mut seq) },
        DeclabStatus::InvalidArgument
    );
    assert!(seq.is_null());

    let mut cfg = ptr::null_mut();
    let name = CString::new("no-such-preset").unwrap();
    assert_eq!(
        unsafe { declab_config_preset(name.as_ptr(), &mut cfg) },
        DeclabStatus::InvalidArgument
    );
    let json = CString::new("{\"scenario\": 3}").unwrap();
    assert_ne!(
        unsafe { declab_config_from_json(json.as_ptr(), &mut cfg) },
        DeclabStatus::Ok
    );
    assert!(!last_error().is_empty());

    let bytes = [0xffu8, 0xfe, 0];
    let s = unsafe { declab_config_preset(bytes.as_ptr().cast(), &mut cfg) };
    assert_eq!(s, DeclabStatus::Utf8);
}

#[test]
fn error_message_truncates_and_clears() {
    let mut cfg = ptr::null_mut();
    let name = CString::new("nope").unwrap();
    unsafe { declab_config_preset(name.as_ptr(), &mut cfg) };
    let full = unsafe { declab_last_error_message(ptr::null_mut(), 0) };
    assert!(full > 4);
    let mut buf = [1 as std::ffi::c_char; 4];
    assert_eq!(
        unsafe { declab_last_error_message(buf.as_mut_ptr(), 4) },
        full
    );
    assert_eq!(buf[3], 0);

    assert_eq!(
        unsafe { declab_seq_log(256, &mut ptr::null_mut()) },
        DeclabStatus::Ok
    );
    assert_eq!(unsafe { declab_last_error_message(ptr::null_mut(), 0) }, 0);
}

#[test]
fn fit_recovers_power_law() {
    let xs: Vec<f64> = (4..10).map(|k| (1u64 << k) as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(0.75)).collect();
    let (mut slope, mut icpt) = (0.0, 0.0);
    assert_eq!(
        unsafe { declab_fit_exponent(xs.as_ptr(), ys.as_ptr(), xs.len(), &mut slope, &mut icpt) },
        DeclabStatus::Ok
    );
    assert!((slope - 0.75).abs() < 1e-12);
}

#[test]
fn preset_runs_and_writes_csv() {
    let name = CString::new("count-solutions").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { declab_config_preset(name.as_ptr(), &mut cfg) },
        DeclabStatus::Ok
    );
    let ns = [256u64, 1024];
    assert_eq!(
        unsafe { declab_config_set_n(cfg, ns.as_ptr(), ns.len()) },
        DeclabStatus::Ok
    );

    let mut rows = ptr::null_mut();
    assert_eq!(unsafe { declab_run(cfg, &mut rows) }, DeclabStatus::Ok);
    let mut len = 0;
    assert_eq!(unsafe { declab_rows_len(rows, &mut len) }, DeclabStatus::Ok);
    assert_eq!(len, 2);

    let mut row = DeclabRow {
        n: 0,
        l: 0,
        l1: 0,
        p: 0.0,
        q: 0.0,
        t: 0.0,
        theta: 0.0,
        seed: 0,
        r: 0,
        x: 0.0,
        lhs: 0.0,
        rhs: 0.0,
        ratio: 0.0,
        paper_bound: 0.0,
    };
    assert_eq!(
        unsafe { declab_rows_get(rows, 1, &mut row) },
        DeclabStatus::Ok
    );
    assert_eq!(row.n, 1024);
    assert!(row.lhs >= row.rhs && row.rhs > 0.0);
    assert_eq!(
        unsafe { declab_rows_get(rows, 2, &mut row) },
        DeclabStatus::OutOfRange
    );

    let mut needed = 0;
    let s = unsafe { declab_rows_group(rows, 0, ptr::null_mut(), 0, &mut needed) };
    assert_eq!(s, DeclabStatus::Ok);

    let dir = std::env::temp_dir().join(format!("declab-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("rows.csv");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { declab_rows_write_csv(rows, cpath.as_ptr()) },
        DeclabStatus::Ok
    );
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("scenario,N,"));
    std::fs::remove_dir_all(&dir).unwrap();

    unsafe {
        declab_rows_free(rows);
        declab_config_free(cfg);
    }
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/declab.h")).unwrap();
    assert!(header.starts_with("#ifndef DECLAB_H"));
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 15);
    for f in exports {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
}
