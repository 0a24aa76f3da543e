//! C ABI over the declab core.
//!
//! Every entry point returns a `DeclabStatus`; results go through out
//! pointers. Objects are opaque handles created by `declab_*_new`-style
//! functions and released by the matching `_free`. On failure the message
//! is kept per thread and read with `declab_last_error_message`. Panics are
//! caught at the boundary and reported as `DECLAB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use declab::counting::{count_solutions, CountMethod};
use declab::numeric::ExponentFit;
use declab::scenario::{run, write_csv, ResultRow, ScenarioConfig};
use declab::seqgen::{gen_ap_rich, gen_log, gen_random, GenDirichletSeq};
use declab::DeclabError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeclabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Utf8 = 3,
    Computation = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeclabCountMethod {
    Brute = 0,
    Mitm = 1,
}

/// Numeric view of one result row; absent optional columns are NaN
/// (or -1 for integer columns).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeclabRow {
    pub n: u64,
    pub l: i64,
    pub l1: i64,
    pub p: f64,
    pub q: f64,
    pub t: f64,
    pub theta: f64,
    pub seed: i64,
    pub r: i64,
    pub x: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub paper_bound: f64,
}

/// Opaque generalized Dirichlet sequence.
pub struct DeclabSeq(GenDirichletSeq);

/// Opaque scenario configuration.
pub struct DeclabConfig(ScenarioConfig);

/// Opaque list of result rows.
pub struct DeclabRows(Vec<ResultRow>);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(DeclabStatus, String);

impl From<DeclabError> for Failure {
    fn from(e: DeclabError) -> Self {
        let status = match e {
            DeclabError::InvalidParameter(_)
            | DeclabError::Unknown(_)
            | DeclabError::Unsupported(_) => DeclabStatus::InvalidArgument,
            DeclabError::Io(_) => DeclabStatus::Io,
            _ => DeclabStatus::Computation,
        };
        Failure(status, e.to_string())
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn guard<F: FnOnce() -> Res<()>>(f: F) -> DeclabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DeclabStatus::Ok
        }
        Ok(Err(Failure(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            DeclabStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(DeclabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Res<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Res<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(DeclabStatus::Utf8, format!("{what}: {e}")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Res<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn declab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length
/// without the terminator. Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn declab_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

fn put_seq(seq: declab::Result<GenDirichletSeq>, dst: *mut *mut DeclabSeq) -> DeclabStatus {
    guard(|| {
        let dst = unsafe { out(dst, "out")? };
        *dst = boxed(DeclabSeq(seq?));
        Ok(())
    })
}

/// The reflected log sequence of ⌊N^{1/2}⌋ terms.
///
/// # Safety
/// `dst` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_seq_log(n: u64, dst: *mut *mut DeclabSeq) -> DeclabStatus {
    put_seq(gen_log(n), dst)
}

/// A random admissible sequence, deterministic per seed.
///
/// # Safety
/// `dst` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_seq_random(
    n: u64,
    theta: f64,
    seed: u64,
    dst: *mut *mut DeclabSeq,
) -> DeclabStatus {
    put_seq(gen_random(n, theta, seed), dst)
}

/// The AP-rich sequence a_n = g(n), n = 0..⌊N/8⌋.
///
/// # Safety
/// `dst` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_seq_ap_rich(n: u64, dst: *mut *mut DeclabSeq) -> DeclabStatus {
    put_seq(gen_ap_rich(n), dst)
}

/// # Safety
/// `seq` must come from a `declab_seq_*` constructor; `len` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_seq_len(seq: *const DeclabSeq, len: *mut usize) -> DeclabStatus {
    guard(|| {
        *out(len, "len")? = as_ref(seq, "seq")?.0.len();
        Ok(())
    })
}

/// Copies all terms into `buf`, which must hold at least `declab_seq_len`
/// values; `cap` is its capacity.
///
/// # Safety
/// `seq` must be a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn declab_seq_terms(
    seq: *const DeclabSeq,
    buf: *mut f64,
    cap: usize,
) -> DeclabStatus {
    guard(|| {
        let terms = &as_ref(seq, "seq")?.0.terms;
        if cap < terms.len() {
            return Err(Failure(
                DeclabStatus::OutOfRange,
                format!("buffer holds {cap} values, sequence has {}", terms.len()),
            ));
        }
        if !terms.is_empty() {
            if buf.is_null() {
                return Err(null("buf"));
            }
            ptr::copy_nonoverlapping(terms.as_ptr(), buf, terms.len());
        }
        Ok(())
    })
}

/// Writes 1 to `valid` when the sequence passes the admissibility check.
///
/// # Safety
/// `seq` must be a live handle and `valid` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_seq_validate(
    seq: *const DeclabSeq,
    valid: *mut i32,
) -> DeclabStatus {
    guard(|| {
        let rep = as_ref(seq, "seq")?.0.validate()?;
        *out(valid, "valid")? = i32::from(rep.valid);
        Ok(())
    })
}

/// # Safety
/// `seq` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn declab_seq_free(seq: *mut DeclabSeq) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

/// Ordered 6-tuples with |a_i+a_j+a_k − a_x−a_y−a_z| ≤ tol, plus the
/// diagonal count.
///
/// # Safety
/// `terms` must be valid for `len` reads; `total` and `diagonal` for writes.
#[no_mangle]
pub unsafe extern "C" fn declab_count_solutions(
    terms: *const f64,
    len: usize,
    tol: f64,
    method: DeclabCountMethod,
    total: *mut u64,
    diagonal: *mut u64,
) -> DeclabStatus {
    guard(|| {
        let a = slice(terms, len, "terms")?;
        let m = match method {
            DeclabCountMethod::Brute => CountMethod::Brute,
            DeclabCountMethod::Mitm => CountMethod::Mitm,
        };
        let c = count_solutions(a, tol, m)?;
        *out(total, "total")? = c.total;
        *out(diagonal, "diagonal")? = c.diagonal;
        Ok(())
    })
}

/// Least-squares slope and intercept of log2(y) against log2(x); needs at
/// least four positive points.
///
/// # Safety
/// `xs` and `ys` must be valid for `len` reads; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn declab_fit_exponent(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    slope: *mut f64,
    intercept: *mut f64,
) -> DeclabStatus {
    guard(|| {
        let (x, y) = (slice(xs, len, "xs")?, slice(ys, len, "ys")?);
        let pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
        let fit = ExponentFit::from_pairs(&pairs)?;
        *out(slope, "slope")? = fit.slope;
        *out(intercept, "intercept")? = fit.intercept;
        Ok(())
    })
}

/// The stock configuration of a preset.
///
/// # Safety
/// `name` must be a NUL-terminated string; `dst` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_config_preset(
    name: *const c_char,
    dst: *mut *mut DeclabConfig,
) -> DeclabStatus {
    guard(|| {
        let cfg = ScenarioConfig::preset(c_str(name, "name")?)?;
        *out(dst, "out")? = boxed(DeclabConfig(cfg));
        Ok(())
    })
}

/// A configuration parsed from JSON and validated.
///
/// # Safety
/// `json` must be a NUL-terminated string; `dst` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_config_from_json(
    json: *const c_char,
    dst: *mut *mut DeclabConfig,
) -> DeclabStatus {
    guard(|| {
        let cfg = ScenarioConfig::from_json(c_str(json, "json")?)?;
        cfg.validate()?;
        *out(dst, "out")? = boxed(DeclabConfig(cfg));
        Ok(())
    })
}

/// Restricts the config's N axis to `ns` (useful for quick runs).
///
/// # Safety
/// `cfg` must be a live handle and `ns` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn declab_config_set_n(
    cfg: *mut DeclabConfig,
    ns: *const u64,
    len: usize,
) -> DeclabStatus {
    guard(|| {
        let cfg = out(cfg, "cfg")?;
        let v = if len == 0 {
            Vec::new()
        } else if ns.is_null() {
            return Err(null("ns"));
        } else {
            std::slice::from_raw_parts(ns, len).to_vec()
        };
        cfg.0.grid.n = v;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn declab_config_free(cfg: *mut DeclabConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs every grid point of `cfg`.
///
/// # Safety
/// `cfg` must be a live handle; `dst` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_run(
    cfg: *const DeclabConfig,
    dst: *mut *mut DeclabRows,
) -> DeclabStatus {
    guard(|| {
        let rows = run(&as_ref(cfg, "cfg")?.0)?;
        *out(dst, "out")? = boxed(DeclabRows(rows));
        Ok(())
    })
}

/// # Safety
/// `rows` must be a live handle; `len` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_rows_len(rows: *const DeclabRows, len: *mut usize) -> DeclabStatus {
    guard(|| {
        *out(len, "len")? = as_ref(rows, "rows")?.0.len();
        Ok(())
    })
}

/// Numeric columns of row `i`.
///
/// # Safety
/// `rows` must be a live handle; `row` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_rows_get(
    rows: *const DeclabRows,
    i: usize,
    row: *mut DeclabRow,
) -> DeclabStatus {
    guard(|| {
        let all = &as_ref(rows, "rows")?.0;
        let r = all.get(i).ok_or_else(|| {
            Failure(
                DeclabStatus::OutOfRange,
                format!("row {i} of {}", all.len()),
            )
        })?;
        let int = |v: Option<u64>| v.map_or(-1, |x| x as i64);
        *out(row, "row")? = DeclabRow {
            n: r.n,
            l: int(r.l.map(|v| v as u64)),
            l1: int(r.l1.map(|v| v as u64)),
            p: r.p.unwrap_or(f64::NAN),
            q: r.q.unwrap_or(f64::NAN),
            t: r.t.unwrap_or(f64::NAN),
            theta: r.theta,
            seed: int(r.seed),
            r: int(r.r.map(|v| v as u64)),
            x: r.x,
            lhs: r.lhs,
            rhs: r.rhs,
            ratio: r.ratio,
            paper_bound: r.paper_bound.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// Copies the fit group label of row `i` like `declab_last_error_message`:
/// returns the full length, writes a truncated NUL-terminated copy.
///
/// # Safety
/// `rows` must be a live handle; `buf` null or valid for `len` bytes;
/// `needed` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn declab_rows_group(
    rows: *const DeclabRows,
    i: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> DeclabStatus {
    guard(|| {
        let all = &as_ref(rows, "rows")?.0;
        let r = all.get(i).ok_or_else(|| {
            Failure(
                DeclabStatus::OutOfRange,
                format!("row {i} of {}", all.len()),
            )
        })?;
        let s = r.fit_group.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = s.len().min(len - 1);
            ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        *out(needed, "needed")? = s.len();
        Ok(())
    })
}

/// Writes the rows as CSV (the CLI schema) to `path`.
///
/// # Safety
/// `rows` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn declab_rows_write_csv(
    rows: *const DeclabRows,
    path: *const c_char,
) -> DeclabStatus {
    guard(|| {
        let rows = &as_ref(rows, "rows")?.0;
        let f = File::create(c_str(path, "path")?).map_err(DeclabError::from)?;
        write_csv(rows, f)?;
        Ok(())
    })
}

/// # Safety
/// `rows` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn declab_rows_free(rows: *mut DeclabRows) {
    if !rows.is_null() {
        drop(Box::from_raw(rows));
    }
}
