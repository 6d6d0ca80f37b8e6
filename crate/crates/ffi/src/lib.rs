//! C ABI over the branchpde solver.
//!
//! Objects are opaque handles created by `bpde_field_from_*` and `bpde_run`, and
//! released with the matching `*_free`. Every fallible function returns a
//! [`BpdeStatus`]; on failure a message is available from
//! [`bpde_last_error`] on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use branchpde::config::{resolve, RunConfig};
use branchpde::harness::{execute, RunKind};
use branchpde::metrics::{exact_mass_case2, fit_convergence_slope};
use branchpde::record::RunStatus;
use branchpde::{Error, RunRecord, SpectralField, TorusDomain};

/// Result codes. Values 2 to 5 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpdeStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Model = 3,
    Runtime = 4,
    Io = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BpdeRunKind {
    Scalar = 0,
    KellerSegel = 1,
    FiniteDifference = 2,
}

/// One row of a run's per-step series.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BpdeSeriesRow {
    pub t: f64,
    pub count_u: u64,
    pub count_v: u64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub floor_hits: u64,
    pub cap_hits: u64,
}

/// Truncated Fourier field.
pub struct BpdeField(SpectralField);

/// Finished solver run.
pub struct BpdeRun {
    record: RunRecord,
    grid: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> BpdeStatus {
    match err.exit_code() {
        2 => BpdeStatus::Config,
        3 => BpdeStatus::Model,
        5 => BpdeStatus::Io,
        _ => BpdeStatus::Runtime,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard<F>(f: F) -> BpdeStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BpdeStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            BpdeStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BpdeStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, what: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))
}

/// Message for the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bpde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn bpde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Projects `count` particles (`dim` coordinates each, row-major) onto the
/// Fourier basis of order `order` on the cube `[0, side)^dim`, normalized by
/// `n_initial`.
///
/// # Safety
/// `positions` must point to `count * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpde_field_from_particles(
    dim: usize,
    side: f64,
    positions: *const f64,
    count: usize,
    n_initial: usize,
    order: usize,
    out: *mut *mut BpdeField,
) -> BpdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let domain = TorusDomain::new(dim, side, 0.0)?;
        let pos = slice(positions, count * dim, "positions")?;
        let field = SpectralField::project_particles(domain, order, pos, n_initial)?;
        *out = Box::into_raw(Box::new(BpdeField(field)));
        Ok(())
    })
}

/// Builds a field from `len` coefficients in the library's mode order.
///
/// # Safety
/// `coeffs` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpde_field_from_coeffs(
    dim: usize,
    side: f64,
    order: usize,
    coeffs: *const f64,
    len: usize,
    out: *mut *mut BpdeField,
) -> BpdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let domain = TorusDomain::new(dim, side, 0.0)?;
        let c = slice(coeffs, len, "coeffs")?.to_vec();
        *out = Box::into_raw(Box::new(BpdeField(SpectralField::from_coeffs(domain, order, c)?)));
        Ok(())
    })
}

/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bpde_field_free(field: *mut BpdeField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// # Safety
/// `x` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn bpde_field_evaluate(field: *const BpdeField, x: *const f64, out: *mut f64) -> BpdeStatus {
    guard(|| {
        let f = &non_null(field, "field")?.0;
        let x = slice(x, f.domain().dim(), "x")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = f.evaluate(x);
        Ok(())
    })
}

/// Writes the `dim` gradient components at `x` into `out`.
///
/// # Safety
/// `x` and `out` must each point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn bpde_field_gradient(field: *const BpdeField, x: *const f64, out: *mut f64) -> BpdeStatus {
    guard(|| {
        let f = &non_null(field, "field")?.0;
        let d = f.domain().dim();
        let x = slice(x, d, "x")?;
        let out = slice_mut(out, d, "out")?;
        out.copy_from_slice(&f.gradient(x));
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpde_field_mass(field: *const BpdeField, out: *mut f64) -> BpdeStatus {
    guard(|| {
        let f = &non_null(field, "field")?.0;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = f.mass();
        Ok(())
    })
}

/// Squared `H^{-s}` norm.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpde_field_sobolev_norm_sq(field: *const BpdeField, s: f64, out: *mut f64) -> BpdeStatus {
    guard(|| {
        let f = &non_null(field, "field")?.0;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        *out = f.sobolev_norm_sq(s);
        Ok(())
    })
}

/// Number of coefficients, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bpde_field_coeff_count(field: *const BpdeField) -> usize {
    field.as_ref().map_or(0, |f| f.0.coeffs().len())
}

/// Copies `min(len, count)` coefficients into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bpde_field_coeffs(field: *const BpdeField, buf: *mut f64, len: usize) -> BpdeStatus {
    guard(|| {
        let c = non_null(field, "field")?.0.coeffs();
        let n = len.min(c.len());
        slice_mut(buf, n, "buf")?.copy_from_slice(&c[..n]);
        Ok(())
    })
}

/// Runs a solver. `config_json` is an optional run configuration (same
/// schema as the CLI `--config` file); `preset` and `seed` override it. Pass
/// null for either string to omit it. A run that fails part-way still
/// returns a handle; check [`bpde_run_completed`].
///
/// # Safety
/// Non-null strings must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpde_run(
    kind: BpdeRunKind,
    preset: *const c_char,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut BpdeRun,
) -> BpdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let mut cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_json(&string(config_json, "config_json")?)?
        };
        if !preset.is_null() {
            cfg = cfg.merged(&RunConfig {
                preset: Some(string(preset, "preset")?),
                ..Default::default()
            });
        }
        cfg.seed = Some(seed);
        let resolved = resolve(&cfg)?;
        let kind = match kind {
            BpdeRunKind::Scalar => RunKind::Scalar,
            BpdeRunKind::KellerSegel => RunKind::Ks,
            BpdeRunKind::FiniteDifference => RunKind::Fd,
        };
        let record = execute(kind, &resolved)?;
        *out = Box::into_raw(Box::new(BpdeRun {
            record,
            grid: resolved.solver.grid,
        }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bpde_run_free(run: *mut BpdeRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Writes 1 to `completed` if the run finished, else 0 and the failure's
/// exit code to `exit_code`.
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpde_run_completed(
    run: *const BpdeRun,
    completed: *mut i32,
    exit_code: *mut i32,
) -> BpdeStatus {
    guard(|| {
        let r = non_null(run, "run")?;
        if completed.is_null() || exit_code.is_null() {
            return Err(Failure::Null("completed/exit_code"));
        }
        match &r.record.status {
            RunStatus::Completed => {
                *completed = 1;
                *exit_code = 0;
            }
            RunStatus::Failed { exit_code: c, .. } => {
                *completed = 0;
                *exit_code = *c;
            }
        }
        Ok(())
    })
}

/// Number of series rows, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bpde_run_series_len(run: *const BpdeRun) -> usize {
    run.as_ref().map_or(0, |r| r.record.series.len())
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpde_run_series_row(run: *const BpdeRun, index: usize, out: *mut BpdeSeriesRow) -> BpdeStatus {
    guard(|| {
        let r = non_null(run, "run")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let row = r.record.series.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!("row {index} out of range ({} rows)", r.record.series.len()))
        })?;
        *out = BpdeSeriesRow {
            t: row.t,
            count_u: row.count_u as u64,
            count_v: row.count_v as u64,
            mass_u: row.mass_u,
            mass_v: row.mass_v,
            floor_hits: row.floor_hits,
            cap_hits: row.cap_hits,
        };
        Ok(())
    })
}

/// Writes the run directory (`run.json`, `series.csv`, snapshots) to `dir`.
///
/// # Safety
/// `dir` must be a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn bpde_run_write(run: *const BpdeRun, dir: *const c_char) -> BpdeStatus {
    guard(|| {
        let r = non_null(run, "run")?;
        let dir = string(dir, "dir")?;
        r.record.write_dir(Path::new(&dir), r.grid, false)?;
        Ok(())
    })
}

/// Exact `v` mass of the linear Keller–Segel preset at time `t`.
#[no_mangle]
pub extern "C" fn bpde_exact_mass_case2(t: f64) -> f64 {
    exact_mass_case2(t)
}

/// Least-squares slope of `ln(errors)` against `ln(ns)`.
///
/// # Safety
/// `ns` and `errors` must each point to `len` doubles; `slope` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bpde_fit_slope(ns: *const f64, errors: *const f64, len: usize, slope: *mut f64) -> BpdeStatus {
    guard(|| {
        let ns = slice(ns, len, "ns")?;
        let errors = slice(errors, len, "errors")?;
        if slope.is_null() {
            return Err(Failure::Null("slope"));
        }
        let pairs: Vec<(f64, f64)> = ns.iter().copied().zip(errors.iter().copied()).collect();
        *slope = fit_convergence_slope(&pairs)?.slope;
        Ok(())
    })
}
