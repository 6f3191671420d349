//! C ABI over `hopflab`.
//!
//! Objects cross the boundary as opaque handles created by `hl_*_new`
//! functions and released by the matching `hl_*_free`. Every fallible call
//! returns an [`HlStatus`]; on failure the message is available from
//! [`hl_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hopflab::energetics::{fs_energy, hopf_invariant_map};
use hopflab::error::Error;
use hopflab::flow::{run_flow, FlowConfig, FlowStatus};
use hopflab::geometry::{build_grid, integrate_scalar, GridSpec};
use hopflab::maps::{AnalyticMap, MapField};
use hopflab::spectral::SpectralBank;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidGrid = 3,
    LengthMismatch = 4,
    NotClosed = 5,
    Inadmissible = 6,
    Parse = 7,
    Numerical = 8,
    Panic = 9,
}

/// Terminal status of [`hl_flow`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlFlowStatus {
    Converged = 0,
    MaxIter = 1,
    QEscaped = 2,
}

/// Quadrature grid on S³.
pub struct HlGrid(GridSpec);

/// Map S³ → S² sampled on a grid.
pub struct HlMap(MapField);

/// Eigenbases of `d*` on closed 2-forms up to a degree.
pub struct HlBank(SpectralBank);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(HlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidGrid(_) | Error::GridMismatch => HlStatus::InvalidGrid,
            Error::LengthMismatch { .. } => HlStatus::LengthMismatch,
            Error::NotClosed { .. } | Error::NotCoClosed { .. } => HlStatus::NotClosed,
            Error::Inadmissible { .. } => HlStatus::Inadmissible,
            Error::Parse(_) | Error::UnknownMap(_) | Error::Csv(_) | Error::Json(_) | Error::Io(_) => HlStatus::Parse,
            Error::NonFiniteEnergy { .. } | Error::Degenerate(_) | Error::EmptyNullSpace { .. } | Error::NotEigen { .. } => {
                HlStatus::Numerical
            }
            _ => HlStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HlStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            HlStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failure on this thread; empty when none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a grid with `n_t` Gauss nodes and `n_ang` (even) nodes per angle.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn hl_grid_new(n_t: usize, n_ang: usize, out: *mut *mut HlGrid) -> HlStatus {
    guard(|| {
        let g = build_grid(n_t, n_ang)?;
        write_out(out, Box::into_raw(Box::new(HlGrid(g))))
    })
}

/// # Safety
/// `grid` must come from [`hl_grid_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hl_grid_free(grid: *mut HlGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Node count, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hl_grid_len(grid: *const HlGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// Copies the ambient coordinates, four per node, into `out[0..4·len]`.
///
/// # Safety
/// `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_grid_ambient(grid: *const HlGrid, out: *mut f64, out_len: usize) -> HlStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != 4 * g.len() {
            return Err(Error::LengthMismatch { expected: 4 * g.len(), got: out_len }.into());
        }
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for (d, x) in dst.chunks_exact_mut(4).zip(g.ambient()) {
            d.copy_from_slice(x);
        }
        Ok(())
    })
}

/// Quadrature `Σ fᵢwᵢ` of nodal values.
///
/// # Safety
/// `f` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_grid_integrate(grid: *const HlGrid, f: *const f64, len: usize, out: *mut f64) -> HlStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        if f.is_null() {
            return Err(null("f"));
        }
        let v = integrate_scalar(std::slice::from_raw_parts(f, len), g)?;
        write_out(out, v)
    })
}

/// Samples a built-in map such as `hopf`, `psi2-hopf` or `hopf-rot:7`.
///
/// # Safety
/// `spec` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_map_from_spec(grid: *const HlGrid, spec: *const c_char, out: *mut *mut HlMap) -> HlStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        if spec.is_null() {
            return Err(null("spec"));
        }
        let s = CStr::from_ptr(spec).to_str().map_err(|_| Fail(HlStatus::Parse, "spec is not UTF-8".into()))?;
        let m = MapField::from_analytic(AnalyticMap::parse(s)?, g);
        write_out(out, Box::into_raw(Box::new(HlMap(m))))
    })
}

/// Map from `3·n_nodes` nodal values; each triple must be a unit vector.
///
/// # Safety
/// `values` must hold `3·n_nodes` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_map_from_values(values: *const f64, n_nodes: usize, out: *mut *mut HlMap) -> HlStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let v = std::slice::from_raw_parts(values, 3 * n_nodes);
        let m = MapField::from_values(v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())?;
        write_out(out, Box::into_raw(Box::new(HlMap(m))))
    })
}

/// # Safety
/// `map` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hl_map_free(map: *mut HlMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Copies the nodal values, three per node, into `out[0..3·len]`.
///
/// # Safety
/// `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hl_map_values(map: *const HlMap, out: *mut f64, out_len: usize) -> HlStatus {
    guard(|| {
        let m = &deref(map, "map")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != 3 * m.len() {
            return Err(Error::LengthMismatch { expected: 3 * m.len(), got: out_len }.into());
        }
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for (d, v) in dst.chunks_exact_mut(3).zip(&m.values) {
            d.copy_from_slice(v);
        }
        Ok(())
    })
}

/// Eigenbases for every `k ≤ k_max` and both signs.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_bank_new(k_max: usize, out: *mut *mut HlBank) -> HlStatus {
    guard(|| {
        let b = SpectralBank::build(k_max)?;
        write_out(out, Box::into_raw(Box::new(HlBank(b))))
    })
}

/// # Safety
/// `bank` must come from [`hl_bank_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hl_bank_free(bank: *mut HlBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Faddeev-Skyrme energy `∫|du|² + ρ⁻²∫¼|du∧du|²`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_fs_energy(map: *const HlMap, grid: *const HlGrid, rho: f64, out: *mut f64) -> HlStatus {
    guard(|| {
        let e = fs_energy(&deref(map, "map")?.0, rho, &deref(grid, "grid")?.0)?;
        write_out(out, e.total)
    })
}

/// Hopf invariant of `map` from the spectral expansion truncated at `k`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_hopf_invariant(
    map: *const HlMap,
    bank: *const HlBank,
    grid: *const HlGrid,
    k: usize,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let q = hopf_invariant_map(&deref(map, "map")?.0, k, &deref(bank, "bank")?.0, &deref(grid, "grid")?.0)?;
        write_out(out, q.q)
    })
}

/// Runs the gradient flow with default settings at coupling `rho` and at
/// most `max_iter` iterations. The terminal map is returned as a new handle.
///
/// # Safety
/// Handles must be live; every output pointer must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_flow(
    map: *const HlMap,
    bank: *const HlBank,
    grid: *const HlGrid,
    rho: f64,
    max_iter: usize,
    out_map: *mut *mut HlMap,
    out_energy: *mut f64,
    out_status: *mut HlFlowStatus,
) -> HlStatus {
    guard(|| {
        if out_map.is_null() || out_energy.is_null() || out_status.is_null() {
            return Err(null("output pointer"));
        }
        let cfg = FlowConfig { rho, max_iter, ..FlowConfig::default() };
        let trace = run_flow(&deref(map, "map")?.0, &cfg, &deref(bank, "bank")?.0, &deref(grid, "grid")?.0)?;
        let status = match trace.status {
            FlowStatus::Converged => HlFlowStatus::Converged,
            FlowStatus::MaxIter => HlFlowStatus::MaxIter,
            FlowStatus::QEscaped => HlFlowStatus::QEscaped,
        };
        write_out(out_energy, trace.final_record().energy)?;
        write_out(out_status, status)?;
        write_out(out_map, Box::into_raw(Box::new(HlMap(trace.terminal))))
    })
}
