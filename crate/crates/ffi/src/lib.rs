//! C ABI over the statistics and analysis core.
//!
//! Conventions:
//! - Fallible functions return a [`PeStatus`] and write results through out
//!   pointers. On failure `pe_last_error()` describes what went wrong.
//! - Handles (`PeCorpus`, `PeLabelMatrix`, `PeCorrelationMatrix`) are
//!   opaque and released with their matching `*_free` function.
//! - Strings returned by the library are released with `pe_string_free`.
//! - Labels are `int8_t`: 0, 1, or -1 for a missing cell.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use persona_eval::analysis::{
    binary_correlation, build_correlation_matrix, clc, igd, CorrelationMatrix, DeletionMode,
    DiagonalMode, LabelMatrix,
};
use persona_eval::corpus::{load_corpus, normalize_mentions, Corpus};
use persona_eval::stats::{classify_estimate, wald_ci, CiConfig, EstimateStatus};
use persona_eval::Condition;

/// Number of persona conditions (matrix columns).
pub const PE_CONDITIONS: usize = 12;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Io = 4,
    Parse = 5,
    /// A correlation or metric is undefined for the given data.
    Undefined = 6,
    Panic = 7,
}

/// Outcome of the confidence rule for one estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeEstimateStatus {
    Confident = 0,
    Excluded = 1,
}

pub struct PeCorpus(Corpus);
pub struct PeLabelMatrix(LabelMatrix);
pub struct PeCorrelationMatrix(CorrelationMatrix);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: PeStatus, msg: impl Into<Vec<u8>>) -> PeStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PeStatus) -> PeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(PeStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, PeStatus> {
    if p.is_null() {
        return Err(fail(PeStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PeStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn ci_config(alpha: f64, repeats: u32) -> Result<CiConfig, PeStatus> {
    CiConfig::new(alpha, repeats).map_err(|e| fail(PeStatus::InvalidArgument, e.to_string()))
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn pe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Wald interval for `p_hat` at significance `alpha` with `repeats` samples.
#[no_mangle]
pub unsafe extern "C" fn pe_wald_ci(
    p_hat: f64,
    alpha: f64,
    repeats: u32,
    low: *mut f64,
    high: *mut f64,
) -> PeStatus {
    guard(|| {
        if low.is_null() || high.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        if !(0.0..=1.0).contains(&p_hat) {
            return fail(PeStatus::InvalidArgument, "p_hat must be in [0, 1]");
        }
        let cfg = match ci_config(alpha, repeats) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let ci = wald_ci(p_hat, &cfg);
        *low = ci.low;
        *high = ci.high;
        PeStatus::Ok
    })
}

/// Applies the confidence rule. `label` receives 0 or 1, or -1 when excluded.
#[no_mangle]
pub unsafe extern "C" fn pe_classify_estimate(
    p_hat: f64,
    alpha: f64,
    repeats: u32,
    status: *mut PeEstimateStatus,
    label: *mut i8,
) -> PeStatus {
    guard(|| {
        if status.is_null() || label.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        if !(0.0..=1.0).contains(&p_hat) {
            return fail(PeStatus::InvalidArgument, "p_hat must be in [0, 1]");
        }
        let cfg = match ci_config(alpha, repeats) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let c = classify_estimate(p_hat, &cfg);
        *status = match c.status {
            EstimateStatus::Confident => PeEstimateStatus::Confident,
            _ => PeEstimateStatus::Excluded,
        };
        *label = c.label.map_or(-1, |l| l as i8);
        PeStatus::Ok
    })
}

unsafe fn labels_arg(p: *const i8, len: usize) -> Result<Vec<Option<u8>>, PeStatus> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(fail(PeStatus::NullPointer, "label array is null"));
    }
    std::slice::from_raw_parts(p, len)
        .iter()
        .map(|&v| match v {
            -1 => Ok(None),
            0 | 1 => Ok(Some(v as u8)),
            _ => Err(fail(PeStatus::InvalidArgument, format!("label {v} is not -1, 0 or 1"))),
        })
        .collect()
}

/// Phi coefficient of two label columns under pairwise deletion. Returns
/// `Undefined` (with `support` still set) when a side is constant or fewer
/// than two rows are shared.
#[no_mangle]
pub unsafe extern "C" fn pe_binary_correlation(
    a: *const i8,
    b: *const i8,
    len: usize,
    r: *mut f64,
    support: *mut usize,
) -> PeStatus {
    guard(|| {
        if r.is_null() || support.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        let (a, b) = match (labels_arg(a, len), labels_arg(b, len)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let c = binary_correlation(&a, &b);
        *support = c.support;
        match c.r {
            Some(v) => {
                *r = v;
                PeStatus::Ok
            }
            None => fail(PeStatus::Undefined, "correlation undefined: constant column or too few shared rows"),
        }
    })
}

/// Replaces user mentions with the `<user>` placeholder. Free the result
/// with `pe_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pe_normalize_mentions(text: *const c_char, out: *mut *mut c_char) -> PeStatus {
    guard(|| {
        if out.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        let text = match str_arg(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match CString::new(normalize_mentions(text)) {
            Ok(c) => {
                *out = c.into_raw();
                PeStatus::Ok
            }
            Err(_) => fail(PeStatus::InvalidArgument, "text contains NUL"),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pe_corpus_load(path: *const c_char, out: *mut *mut PeCorpus) -> PeStatus {
    guard(|| {
        if out.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_corpus(path) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(PeCorpus(c)));
                PeStatus::Ok
            }
            Err(e @ persona_eval::corpus::CorpusError::Io { .. }) => fail(PeStatus::Io, e.to_string()),
            Err(e) => fail(PeStatus::Parse, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pe_corpus_len(corpus: *const PeCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn pe_corpus_included_count(corpus: *const PeCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.included_count())
}

#[no_mangle]
pub unsafe extern "C" fn pe_corpus_free(corpus: *mut PeCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// An all-missing matrix of `rows` × 12 labels in canonical condition order.
#[no_mangle]
pub unsafe extern "C" fn pe_label_matrix_new(rows: usize, out: *mut *mut PeLabelMatrix) -> PeStatus {
    guard(|| {
        if out.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        let ids = (0..rows).map(|i| i.to_string()).collect();
        *out = Box::into_raw(Box::new(PeLabelMatrix(LabelMatrix::empty(ids))));
        PeStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn pe_label_matrix_set(
    matrix: *mut PeLabelMatrix,
    row: usize,
    condition: usize,
    label: i8,
) -> PeStatus {
    guard(|| {
        let Some(m) = matrix.as_mut() else {
            return fail(PeStatus::NullPointer, "matrix is null");
        };
        if row >= m.0.cells.len() || condition >= PE_CONDITIONS {
            return fail(PeStatus::InvalidArgument, "row or condition out of range");
        }
        m.0.cells[row][condition] = match label {
            -1 => None,
            0 | 1 => Some(label as u8),
            _ => return fail(PeStatus::InvalidArgument, format!("label {label} is not -1, 0 or 1")),
        };
        PeStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn pe_label_matrix_free(matrix: *mut PeLabelMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// 12×12 phi matrix; `listwise` nonzero keeps only fully labelled rows.
#[no_mangle]
pub unsafe extern "C" fn pe_correlation_matrix_build(
    matrix: *const PeLabelMatrix,
    listwise: i32,
    out: *mut *mut PeCorrelationMatrix,
) -> PeStatus {
    guard(|| {
        let Some(m) = matrix.as_ref() else {
            return fail(PeStatus::NullPointer, "matrix is null");
        };
        if out.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        let mode = if listwise != 0 { DeletionMode::Listwise } else { DeletionMode::Pairwise };
        *out = Box::into_raw(Box::new(PeCorrelationMatrix(build_correlation_matrix(&m.0, mode))));
        PeStatus::Ok
    })
}

/// Matrix built from 144 row-major values; NaN marks an undefined entry.
#[no_mangle]
pub unsafe extern "C" fn pe_correlation_matrix_from_values(
    values: *const f64,
    out: *mut *mut PeCorrelationMatrix,
) -> PeStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            return fail(PeStatus::NullPointer, "pointer argument is null");
        }
        let v = std::slice::from_raw_parts(values, PE_CONDITIONS * PE_CONDITIONS);
        let mut cm = CorrelationMatrix::from_values([[0.0; PE_CONDITIONS]; PE_CONDITIONS]);
        for (k, x) in v.iter().enumerate() {
            cm.entries[k / PE_CONDITIONS][k % PE_CONDITIONS] = (!x.is_nan()).then_some(*x);
        }
        *out = Box::into_raw(Box::new(PeCorrelationMatrix(cm)));
        PeStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn pe_correlation_get(
    cm: *const PeCorrelationMatrix,
    a: usize,
    b: usize,
    r: *mut f64,
) -> PeStatus {
    guard(|| {
        let Some(cm) = cm.as_ref() else {
            return fail(PeStatus::NullPointer, "matrix is null");
        };
        if r.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        if a >= PE_CONDITIONS || b >= PE_CONDITIONS {
            return fail(PeStatus::InvalidArgument, "condition index out of range");
        }
        match cm.0.entries[a][b] {
            Some(v) => {
                *r = v;
                PeStatus::Ok
            }
            None => fail(
                PeStatus::Undefined,
                format!(
                    "correlation {} × {} is undefined",
                    Condition::from_index(a).label(),
                    Condition::from_index(b).label()
                ),
            ),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pe_clc(cm: *const PeCorrelationMatrix, exclude_diagonal: i32, out: *mut f64) -> PeStatus {
    guard(|| {
        let Some(cm) = cm.as_ref() else {
            return fail(PeStatus::NullPointer, "matrix is null");
        };
        if out.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        let mode = if exclude_diagonal != 0 { DiagonalMode::Exclude } else { DiagonalMode::Include };
        match clc(&cm.0, mode) {
            Ok(v) => {
                *out = v;
                PeStatus::Ok
            }
            Err(e) => fail(PeStatus::Undefined, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pe_igd(cm: *const PeCorrelationMatrix, out: *mut f64) -> PeStatus {
    guard(|| {
        let Some(cm) = cm.as_ref() else {
            return fail(PeStatus::NullPointer, "matrix is null");
        };
        if out.is_null() {
            return fail(PeStatus::NullPointer, "output pointer is null");
        }
        match igd(&cm.0) {
            Ok(v) => {
                *out = v;
                PeStatus::Ok
            }
            Err(e) => fail(PeStatus::Undefined, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pe_correlation_matrix_free(cm: *mut PeCorrelationMatrix) {
    if !cm.is_null() {
        drop(Box::from_raw(cm));
    }
}
