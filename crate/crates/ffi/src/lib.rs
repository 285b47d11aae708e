//! C ABI for the sampling engine: opaque handles, integer status codes, and
//! a thread-local last-error message. The header is generated by cbindgen
//! into `include/iidgen.h` at build time.
//!
//! Usage from C:
//!
//! ```c
//! IidgenSampleSet *set = NULL;
//! if (iidgen_sample_json(config_json, &set) != IIDGEN_STATUS_OK) {
//!     fprintf(stderr, "%s\n", iidgen_last_error());
//!     return 1;
//! }
//! size_t k = iidgen_samples_count(set), d = iidgen_samples_dim(set);
//! double *buf = malloc(k * d * sizeof(double));
//! iidgen_samples_copy(set, buf, k * d);
//! iidgen_samples_free(set);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use iidgen::cli::{parse_config, run_in_memory};
use iidgen::engine::SampleSet;

/// Status codes returned by every fallible function. The numeric values
/// match the CLI exit codes where a correspondence exists.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum IidgenStatus {
    Ok = 0,
    /// Configuration rejected (parse error, unknown key, bad value).
    Config = 2,
    /// Dataset or artifact problem.
    Data = 3,
    /// Numerical failure (degenerate scale, minorization too small, ...).
    Numerical = 4,
    /// Internal error; see `iidgen_last_error`.
    Internal = 5,
    /// A required pointer argument was null or a buffer was too small.
    BadArgument = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &iidgen::Error) -> IidgenStatus {
    match err.exit_code() {
        2 => IidgenStatus::Config,
        3 => IidgenStatus::Data,
        4 => IidgenStatus::Numerical,
        _ => IidgenStatus::Internal,
    }
}

/// An immutable set of i.i.d. draws produced by the engine.
pub struct IidgenSampleSet {
    inner: SampleSet,
    dim: usize,
}

/// Last error message for this thread; valid until the next failing call.
/// Never null.
#[no_mangle]
pub extern "C" fn iidgen_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn iidgen_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Run the full pipeline (pilot when configured, weight estimation,
/// sampling) for a JSON run configuration; the schema is the same one the
/// CLI consumes. On success `*out` owns the sample set and must be released
/// with `iidgen_samples_free`.
///
/// # Safety
/// `config_json` must point to a valid NUL-terminated string and `out` to a
/// writable pointer slot; both must outlive the call.
#[no_mangle]
pub unsafe extern "C" fn iidgen_sample_json(
    config_json: *const c_char,
    out: *mut *mut IidgenSampleSet,
) -> IidgenStatus {
    if config_json.is_null() || out.is_null() {
        set_error("null pointer argument");
        return IidgenStatus::BadArgument;
    }
    *out = ptr::null_mut();
    let text = match CStr::from_ptr(config_json).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("config is not valid UTF-8");
            return IidgenStatus::BadArgument;
        }
    };
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<SampleSet, iidgen::Error> {
        let config = parse_config(text)?;
        run_in_memory(&config)
    }));
    match result {
        Ok(Ok(samples)) => {
            let dim = samples.rows.first().map_or(0, |r| r.theta.len());
            *out = Box::into_raw(Box::new(IidgenSampleSet { inner: samples, dim }));
            IidgenStatus::Ok
        }
        Ok(Err(err)) => {
            set_error(&err.to_string());
            status_of(&err)
        }
        Err(_) => {
            set_error("panic inside the sampling engine");
            IidgenStatus::Internal
        }
    }
}

/// Number of draws in the set.
///
/// # Safety
/// `set` must be a live pointer from `iidgen_sample_json`.
#[no_mangle]
pub unsafe extern "C" fn iidgen_samples_count(set: *const IidgenSampleSet) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).inner.rows.len()
}

/// Dimension of each draw.
///
/// # Safety
/// `set` must be a live pointer from `iidgen_sample_json`.
#[no_mangle]
pub unsafe extern "C" fn iidgen_samples_dim(set: *const IidgenSampleSet) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).dim
}

/// Shell count after any doubling.
///
/// # Safety
/// `set` must be a live pointer from `iidgen_sample_json`.
#[no_mangle]
pub unsafe extern "C" fn iidgen_samples_final_shells(set: *const IidgenSampleSet) -> usize {
    if set.is_null() {
        return 0;
    }
    (*set).inner.final_shells
}

/// Copy the draws row-major into `buffer` (count * dim doubles).
///
/// # Safety
/// `set` must be live and `buffer` must point to at least `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn iidgen_samples_copy(
    set: *const IidgenSampleSet,
    buffer: *mut f64,
    len: usize,
) -> IidgenStatus {
    if set.is_null() || buffer.is_null() {
        set_error("null pointer argument");
        return IidgenStatus::BadArgument;
    }
    let s = &*set;
    let need = s.inner.rows.len() * s.dim;
    if len < need {
        set_error("buffer too small");
        return IidgenStatus::BadArgument;
    }
    let out = std::slice::from_raw_parts_mut(buffer, need);
    for (row, chunk) in s.inner.rows.iter().zip(out.chunks_exact_mut(s.dim)) {
        chunk.copy_from_slice(&row.theta);
    }
    IidgenStatus::Ok
}

/// Per-draw diagnostics: selected shell (1-based), coalescence time, and the
/// mixture component index. Null out-pointers are skipped.
///
/// # Safety
/// `set` must be live; non-null out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn iidgen_samples_row_meta(
    set: *const IidgenSampleSet,
    row: usize,
    shell_index: *mut u64,
    t_coalesce: *mut u64,
    component: *mut u64,
) -> IidgenStatus {
    if set.is_null() {
        set_error("null pointer argument");
        return IidgenStatus::BadArgument;
    }
    let s = &*set;
    let Some(r) = s.inner.rows.get(row) else {
        set_error("row index out of range");
        return IidgenStatus::BadArgument;
    };
    if !shell_index.is_null() {
        *shell_index = (r.shell + 1) as u64;
    }
    if !t_coalesce.is_null() {
        *t_coalesce = r.t_coalesce;
    }
    if !component.is_null() {
        *component = r.component as u64;
    }
    IidgenStatus::Ok
}

/// Release a sample set. Null is a no-op; a pointer must not be freed twice.
///
/// # Safety
/// `set` must be null or a pointer previously returned by
/// `iidgen_sample_json` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn iidgen_samples_free(set: *mut IidgenSampleSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}
