//! C ABI over `tersoff-md`.
//!
//! Every handle is opaque and owned by the caller once returned; free it with
//! the matching `*_free` function. Fallible calls return a [`TersoffStatus`]
//! and leave a message for [`tersoff_last_error_message`] on failure.
//! Panics never cross the boundary; they surface as `TERSOFF_STATUS_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tersoff_md::engine::{make_diamond_lattice, run, RunConfig, RunReport, Scheme};
use tersoff_md::model::{AtomSystem, ParamTable, PrecisionMode, Vec3};
use tersoff_md::neighbor::build_neighbor_list;
use tersoff_md::potential_opt::{compute_forces, ForceOptions};
use tersoff_md::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TersoffStatus {
    Ok = 0,
    InvalidArgument = 1,
    Parse = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

pub const TERSOFF_SCHEME_AUTO: u32 = 0;
pub const TERSOFF_SCHEME_REF: u32 = 1;
pub const TERSOFF_SCHEME_SCALAR_OPT: u32 = 2;
pub const TERSOFF_SCHEME_V1: u32 = 3;
pub const TERSOFF_SCHEME_V2: u32 = 4;
pub const TERSOFF_SCHEME_V3: u32 = 5;

pub const TERSOFF_PRECISION_REF: u32 = 0;
pub const TERSOFF_PRECISION_DOUBLE: u32 = 1;
pub const TERSOFF_PRECISION_SINGLE: u32 = 2;
pub const TERSOFF_PRECISION_MIXED: u32 = 3;

/// Parameter table handle.
pub struct TersoffParams(ParamTable);

/// Atom system handle.
pub struct TersoffSystem(AtomSystem);

/// Run report handle.
pub struct TersoffReport(RunReport);

/// Force-evaluation options. `width` 0 selects the default for the precision.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TersoffOptions {
    pub scheme: u32,
    pub precision: u32,
    pub width: usize,
    pub k_max: usize,
    pub workers: usize,
}

/// Run configuration. `width` 0 selects the default for the precision;
/// a negative `temperature` keeps the system's velocities.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct TersoffRunConfig {
    pub steps: usize,
    pub dt: f64,
    pub skin: f64,
    pub k_max: usize,
    pub scheme: u32,
    pub precision: u32,
    pub width: usize,
    pub workers: usize,
    pub thermo_every: usize,
    pub seed: u64,
    pub temperature: f64,
}

/// One thermodynamic sample.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct TersoffSample {
    pub step: usize,
    pub time_ps: f64,
    pub temp_k: f64,
    pub pe_ev: f64,
    pub ke_ev: f64,
    pub etot_ev: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

struct Fail(TersoffStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Parse { .. } | Error::Incomplete(_) | Error::Validation { .. } => TersoffStatus::Parse,
            Error::Config(_) => TersoffStatus::Config,
            Error::NonFinite { .. } => TersoffStatus::Numerical,
            Error::Io { .. } => TersoffStatus::Io,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(TersoffStatus::InvalidArgument, msg.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TersoffStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TersoffStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            TersoffStatus::Panic
        }
    }
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid("output pointer is null"))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

fn scheme_from(code: u32) -> Result<Scheme, Fail> {
    Ok(match code {
        TERSOFF_SCHEME_AUTO => Scheme::Auto,
        TERSOFF_SCHEME_REF => Scheme::Ref,
        TERSOFF_SCHEME_SCALAR_OPT => Scheme::ScalarOpt,
        TERSOFF_SCHEME_V1 => Scheme::V1,
        TERSOFF_SCHEME_V2 => Scheme::V2,
        TERSOFF_SCHEME_V3 => Scheme::V3,
        other => return Err(invalid(&format!("unknown scheme code {other}"))),
    })
}

fn precision_from(code: u32) -> Result<PrecisionMode, Fail> {
    Ok(match code {
        TERSOFF_PRECISION_REF => PrecisionMode::Ref,
        TERSOFF_PRECISION_DOUBLE => PrecisionMode::OptD,
        TERSOFF_PRECISION_SINGLE => PrecisionMode::OptS,
        TERSOFF_PRECISION_MIXED => PrecisionMode::OptM,
        other => return Err(invalid(&format!("unknown precision code {other}"))),
    })
}

fn width_from(w: usize) -> Option<usize> {
    (w != 0).then_some(w)
}

/// Message for the last failed call on this thread, or "" after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tersoff_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// The built-in silicon table.
#[no_mangle]
pub unsafe extern "C" fn tersoff_params_silicon(out: *mut *mut TersoffParams) -> TersoffStatus {
    guard(|| {
        *out_ptr(out)? = Box::into_raw(Box::new(TersoffParams(ParamTable::silicon())));
        Ok(())
    })
}

/// Loads a parameter file.
#[no_mangle]
pub unsafe extern "C" fn tersoff_params_load(path: *const c_char, out: *mut *mut TersoffParams) -> TersoffStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let table = ParamTable::from_path(c_str(path, "path")?)?;
        *slot = Box::into_raw(Box::new(TersoffParams(table)));
        Ok(())
    })
}

/// Parses parameter-file text.
#[no_mangle]
pub unsafe extern "C" fn tersoff_params_parse(text: *const c_char, out: *mut *mut TersoffParams) -> TersoffStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let table = ParamTable::parse(c_str(text, "text")?)?;
        *slot = Box::into_raw(Box::new(TersoffParams(table)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tersoff_params_free(params: *mut TersoffParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Largest outer cutoff R + D over all triplets, or NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tersoff_params_cutoff(params: *const TersoffParams) -> f64 {
    params.as_ref().map_or(f64::NAN, |p| p.0.r_cut_max())
}

/// `8·nx·ny·nz` atoms of the first species on a periodic diamond lattice.
#[no_mangle]
pub unsafe extern "C" fn tersoff_system_diamond(
    params: *const TersoffParams,
    nx: usize,
    ny: usize,
    nz: usize,
    a0: f64,
    mass: f64,
    skin: f64,
    out: *mut *mut TersoffSystem,
) -> TersoffStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let p = &in_ref(params, "params")?.0;
        let masses = vec![mass; p.species_count()];
        let sys = make_diamond_lattice([nx, ny, nz], a0, 0, &masses, p.r_cut_max() + skin)?;
        *slot = Box::into_raw(Box::new(TersoffSystem(sys)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tersoff_system_free(system: *mut TersoffSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Number of atoms, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tersoff_system_len(system: *const TersoffSystem) -> usize {
    system.as_ref().map_or(0, |s| s.0.len())
}

/// Copies positions as `x0 y0 z0 x1 ...` into `xyz`, which holds `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tersoff_system_get_positions(
    system: *const TersoffSystem,
    xyz: *mut f64,
    len: usize,
) -> TersoffStatus {
    guard(|| {
        let s = &in_ref(system, "system")?.0;
        if xyz.is_null() || len != 3 * s.len() {
            return Err(invalid("buffer must be non-null with 3·N doubles"));
        }
        let buf = std::slice::from_raw_parts_mut(xyz, len);
        for (chunk, p) in buf.chunks_exact_mut(3).zip(&s.positions) {
            chunk.copy_from_slice(&p.to_array());
        }
        Ok(())
    })
}

/// Replaces positions from `xyz` (`len` = 3·N doubles). Positions are wrapped
/// into the box; non-finite input is rejected.
#[no_mangle]
pub unsafe extern "C" fn tersoff_system_set_positions(
    system: *mut TersoffSystem,
    xyz: *const f64,
    len: usize,
) -> TersoffStatus {
    guard(|| {
        let s = &mut system.as_mut().ok_or_else(|| invalid("system is null"))?.0;
        if xyz.is_null() || len != 3 * s.len() {
            return Err(invalid("buffer must be non-null with 3·N doubles"));
        }
        let buf = std::slice::from_raw_parts(xyz, len);
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(invalid("positions must be finite"));
        }
        for (p, chunk) in s.positions.iter_mut().zip(buf.chunks_exact(3)) {
            *p = Vec3::new(chunk[0], chunk[1], chunk[2]);
        }
        s.wrap_positions();
        Ok(())
    })
}

/// Fills `out` with the default options (auto scheme, double precision).
#[no_mangle]
pub unsafe extern "C" fn tersoff_options_default(out: *mut TersoffOptions) -> TersoffStatus {
    guard(|| {
        let d = ForceOptions::default();
        *out_ptr(out)? = TersoffOptions {
            scheme: TERSOFF_SCHEME_AUTO,
            precision: TERSOFF_PRECISION_DOUBLE,
            width: d.width,
            k_max: d.k_max,
            workers: d.workers,
        };
        Ok(())
    })
}

/// Potential energy (eV) and forces (eV/Å, `forces_len` = 3·N doubles).
#[no_mangle]
pub unsafe extern "C" fn tersoff_compute(
    params: *const TersoffParams,
    system: *const TersoffSystem,
    options: *const TersoffOptions,
    energy: *mut f64,
    forces: *mut f64,
    forces_len: usize,
) -> TersoffStatus {
    guard(|| {
        let p = &in_ref(params, "params")?.0;
        let s = &in_ref(system, "system")?.0;
        let o = in_ref(options, "options")?;
        let e_out = out_ptr(energy)?;
        if forces.is_null() || forces_len != 3 * s.len() {
            return Err(invalid("force buffer must be non-null with 3·N doubles"));
        }
        let precision = precision_from(o.precision)?;
        let opts = ForceOptions {
            scheme: scheme_from(o.scheme)?,
            precision,
            width: width_from(o.width).unwrap_or(RunConfig { precision, ..Default::default() }.width()),
            k_max: o.k_max,
            workers: o.workers,
            filter: true,
        };
        let list = build_neighbor_list(s, p.r_cut_max(), 0.0)?;
        let ef = compute_forces(s, &list, p, &opts)?;
        *e_out = ef.energy;
        let buf = std::slice::from_raw_parts_mut(forces, forces_len);
        for (chunk, f) in buf.chunks_exact_mut(3).zip(&ef.forces) {
            chunk.copy_from_slice(&f.to_array());
        }
        Ok(())
    })
}

/// Fills `out` with the default run configuration.
#[no_mangle]
pub unsafe extern "C" fn tersoff_run_config_default(out: *mut TersoffRunConfig) -> TersoffStatus {
    guard(|| {
        let d = RunConfig::default();
        *out_ptr(out)? = TersoffRunConfig {
            steps: d.steps,
            dt: d.dt,
            skin: d.skin,
            k_max: d.k_max,
            scheme: TERSOFF_SCHEME_AUTO,
            precision: TERSOFF_PRECISION_DOUBLE,
            width: 0,
            workers: d.workers,
            thermo_every: d.thermo_every,
            seed: d.seed,
            temperature: d.temperature.unwrap_or(-1.0),
        };
        Ok(())
    })
}

/// Runs a simulation on a copy of `system`.
#[no_mangle]
pub unsafe extern "C" fn tersoff_run(
    params: *const TersoffParams,
    system: *const TersoffSystem,
    config: *const TersoffRunConfig,
    out: *mut *mut TersoffReport,
) -> TersoffStatus {
    guard(|| {
        let slot = out_ptr(out)?;
        let p = &in_ref(params, "params")?.0;
        let s = &in_ref(system, "system")?.0;
        let c = in_ref(config, "config")?;
        let cfg = RunConfig {
            steps: c.steps,
            dt: c.dt,
            skin: c.skin,
            rebuild_check_every: 1,
            k_max: c.k_max,
            scheme: scheme_from(c.scheme)?,
            precision: precision_from(c.precision)?,
            backend_width: width_from(c.width),
            workers: c.workers,
            thermo_every: c.thermo_every,
            seed: c.seed,
            temperature: (c.temperature >= 0.0).then_some(c.temperature),
        };
        let report = run(s.clone(), p, &cfg)?;
        *slot = Box::into_raw(Box::new(TersoffReport(report)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn tersoff_report_free(report: *mut TersoffReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Number of thermo samples, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tersoff_report_sample_count(report: *const TersoffReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.samples.len())
}

/// Throughput of the timed loop, or NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tersoff_report_ns_per_day(report: *const TersoffReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.ns_per_day)
}

#[no_mangle]
pub unsafe extern "C" fn tersoff_report_sample(
    report: *const TersoffReport,
    index: usize,
    out: *mut TersoffSample,
) -> TersoffStatus {
    guard(|| {
        let r = &in_ref(report, "report")?.0;
        let slot = out_ptr(out)?;
        let s = r
            .samples
            .get(index)
            .ok_or_else(|| invalid(&format!("sample {index} out of range ({})", r.samples.len())))?;
        *slot = TersoffSample {
            step: s.step,
            time_ps: s.time_ps,
            temp_k: s.temp_k,
            pe_ev: s.pe_ev,
            ke_ev: s.ke_ev,
            etot_ev: s.etot_ev,
        };
        Ok(())
    })
}

/// The report as CSV. Free the string with [`tersoff_string_free`].
/// Returns null for a null handle.
#[no_mangle]
pub unsafe extern "C" fn tersoff_report_csv(report: *const TersoffReport) -> *mut c_char {
    match report.as_ref() {
        Some(r) => CString::new(r.0.to_csv()).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

#[no_mangle]
pub unsafe extern "C" fn tersoff_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
