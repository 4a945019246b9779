//! C ABI over the qbattery simulator.
//!
//! Handles are opaque and owned by the caller, who frees them with the
//! matching `*_free` function. Every fallible call returns a [`QbStatus`];
//! on failure `qb_last_error_message` describes the error for the calling
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qbattery::cumulant::{simulate_energy, SolverConfig};
use qbattery::model::{drive_amplitude_from_photon_ratio, ModelParams, PulseParams};
use qbattery::observables::{charging_metrics, classify_regime, convolve_response, scaling_exponent, EnergyTrace, Regime};
use qbattery::spectrum::absorption_spectrum;
use qbattery::units::{fs_to_ps, lifetime_to_mev, mev_to_nev, nev_to_mev, ps_to_fs, HBAR};
use qbattery::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QbStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid parameter or configuration.
    InvalidArgument = 2,
    /// Integration failure, undefined metric, spectral pole.
    Numeric = 3,
    Data = 4,
    UnknownParameter = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QbRegime {
    DecayDominated = 0,
    Crossover = 1,
    CouplingDominated = 2,
    NonResonant = 3,
}

/// Charging metrics: times in ps, energy in meV, power in meV/ps.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QbMetrics {
    pub rise_time: f64,
    pub peak_energy: f64,
    pub peak_power: f64,
    pub t_peak: f64,
    pub t_half: f64,
}

/// Regime and its boundary molecule counts; rates in meV.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QbRegimeReport {
    pub regime: QbRegime,
    pub effective_coupling: f64,
    pub cavity_decay: f64,
    pub dephasing: f64,
    pub n_kappa: f64,
    pub n_gammaz: f64,
    pub n_sigma: f64,
}

/// Model, pump and solver settings.
pub struct QbModel {
    params: ModelParams,
    pulse: PulseParams,
    solver: SolverConfig,
}

/// Energy trace on a uniform grid.
pub struct QbTrace {
    trace: EnergyTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> QbStatus {
    match err.exit_code() {
        2 => QbStatus::InvalidArgument,
        3 => QbStatus::Numeric,
        _ => QbStatus::Data,
    }
}

/// Run `f`, recording errors and converting panics.
fn guard<F: FnOnce() -> Result<(), (QbStatus, String)>>(f: F) -> QbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QbStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (QbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (QbStatus, String) {
    (QbStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Best-fit model with photon ratio 0.14; free with `qb_model_free`.
#[no_mangle]
pub extern "C" fn qb_model_new_default() -> *mut QbModel {
    let params = ModelParams::default();
    let pulse = PulseParams::default().with_amplitude(drive_amplitude_from_photon_ratio(0.14, params.n_molecules));
    Box::into_raw(Box::new(QbModel { params, pulse, solver: SolverConfig::default() }))
}

/// # Safety
/// `model` must come from `qb_model_new_default` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qb_model_free(model: *mut QbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Set a named parameter. Names and units:
/// `n_molecules`, `coupling_nev`, `cavity_lifetime_fs`, `dephasing_mev`,
/// `dephasing_ref_count`, `scale_dephasing` (0 or 1), `relaxation_mev`,
/// `detuning_cavity_mev`, `detuning_molecule_mev`, `transition_energy_mev`,
/// `amplitude`, `photon_ratio` (sets the amplitude to `√(rN)` for the
/// current `N`), `pulse_center_fs`, `pulse_width_fs`, `response_fs`,
/// `t_start_ps`, `t_end_ps`, `output_dt_ps`, `rel_tol`, `abs_tol`.
///
/// # Safety
/// `model` must be a live handle and `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qb_model_set_param(model: *mut QbModel, name: *const c_char, value: f64) -> QbStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name).to_str().map_err(|_| (QbStatus::InvalidArgument, "name is not UTF-8".into()))?;
        if !value.is_finite() {
            return Err((QbStatus::InvalidArgument, format!("{name}: value must be finite")));
        }
        let mut next = QbModel { params: m.params, pulse: m.pulse, solver: m.solver };
        let (p, u, s) = (&mut next.params, &mut next.pulse, &mut next.solver);
        match name {
            "n_molecules" => p.n_molecules = value,
            "coupling_nev" => p.coupling = nev_to_mev(value),
            "cavity_lifetime_fs" if value > 0.0 => p.cavity_decay = lifetime_to_mev(fs_to_ps(value)),
            "cavity_lifetime_fs" => return Err((QbStatus::InvalidArgument, "cavity lifetime must be positive".into())),
            "dephasing_mev" => p.dephasing_base = value,
            "dephasing_ref_count" => p.dephasing_ref_count = value,
            "scale_dephasing" => p.scale_dephasing = value != 0.0,
            "relaxation_mev" => p.relaxation = value,
            "detuning_cavity_mev" => p.detuning_cavity = value,
            "detuning_molecule_mev" => p.detuning_molecule = value,
            "transition_energy_mev" => p.transition_energy = value,
            "amplitude" => u.amplitude = value,
            "photon_ratio" if value >= 0.0 => u.amplitude = drive_amplitude_from_photon_ratio(value, p.n_molecules),
            "photon_ratio" => return Err((QbStatus::InvalidArgument, "photon ratio must be non-negative".into())),
            "pulse_center_fs" => u.center = fs_to_ps(value),
            "pulse_width_fs" => u.width = fs_to_ps(value),
            "response_fs" => u.response_width = fs_to_ps(value),
            "t_start_ps" => s.t_start = value,
            "t_end_ps" => s.t_end = value,
            "output_dt_ps" => s.output_dt = value,
            "rel_tol" => s.rel_tol = value,
            "abs_tol" => s.abs_tol = value,
            other => return Err((QbStatus::UnknownParameter, format!("unknown parameter '{other}'"))),
        }
        next.params.validate().map_err(lib_err)?;
        next.pulse.validate().map_err(lib_err)?;
        next.solver.validate().map_err(lib_err)?;
        *m = next;
        Ok(())
    })
}

/// Read a named parameter (same names and units as `qb_model_set_param`).
///
/// # Safety
/// `model` must be a live handle, `name` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_model_get_param(model: *const QbModel, name: *const c_char, out: *mut f64) -> QbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if name.is_null() {
            return Err(null("name"));
        }
        let name = CStr::from_ptr(name).to_str().map_err(|_| (QbStatus::InvalidArgument, "name is not UTF-8".into()))?;
        let (p, u, s) = (&m.params, &m.pulse, &m.solver);
        *out = match name {
            "n_molecules" => p.n_molecules,
            "coupling_nev" => mev_to_nev(p.coupling),
            "cavity_lifetime_fs" => ps_to_fs(HBAR / p.cavity_decay),
            "dephasing_mev" => p.dephasing_base,
            "dephasing_ref_count" => p.dephasing_ref_count,
            "scale_dephasing" => f64::from(u8::from(p.scale_dephasing)),
            "relaxation_mev" => p.relaxation,
            "detuning_cavity_mev" => p.detuning_cavity,
            "detuning_molecule_mev" => p.detuning_molecule,
            "transition_energy_mev" => p.transition_energy,
            "amplitude" => u.amplitude,
            "photon_ratio" => u.amplitude * u.amplitude / p.n_molecules,
            "pulse_center_fs" => ps_to_fs(u.center),
            "pulse_width_fs" => ps_to_fs(u.width),
            "response_fs" => ps_to_fs(u.response_width),
            "t_start_ps" => s.t_start,
            "t_end_ps" => s.t_end,
            "output_dt_ps" => s.output_dt,
            "rel_tol" => s.rel_tol,
            "abs_tol" => s.abs_tol,
            other => return Err((QbStatus::UnknownParameter, format!("unknown parameter '{other}'"))),
        };
        Ok(())
    })
}

/// Integrate the moment equations from the ground state. On success `*out`
/// holds a new trace (unconvolved) to be freed with `qb_trace_free`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_simulate(model: *const QbModel, out: *mut *mut QbTrace) -> QbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let trace = simulate_energy(&m.params, &m.pulse, &m.solver).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(QbTrace { trace }));
        Ok(())
    })
}

/// Gaussian response convolution of a trace into a new trace.
///
/// # Safety
/// `trace` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_trace_convolve(trace: *const QbTrace, sigma_ps: f64, out: *mut *mut QbTrace) -> QbStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(|| null("trace"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let trace = convolve_response(&t.trace, sigma_ps).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(QbTrace { trace }));
        Ok(())
    })
}

/// # Safety
/// `trace` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn qb_trace_free(trace: *mut QbTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// Number of samples, 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qb_trace_len(trace: *const QbTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.trace.times.len())
}

/// Sample times (ps); valid while the trace lives.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qb_trace_times(trace: *const QbTrace) -> *const f64 {
    trace.as_ref().map_or(ptr::null(), |t| t.trace.times.as_ptr())
}

/// Energy per molecule (meV); valid while the trace lives.
///
/// # Safety
/// `trace` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qb_trace_energy(trace: *const QbTrace) -> *const f64 {
    trace.as_ref().map_or(ptr::null(), |t| t.trace.energy.as_ptr())
}

/// Rise time, peak energy and peak power relative to arrival `t_p` (ps).
///
/// # Safety
/// `trace` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_trace_metrics(trace: *const QbTrace, t_p: f64, out: *mut QbMetrics) -> QbStatus {
    guard(|| {
        let t = trace.as_ref().ok_or_else(|| null("trace"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let m = charging_metrics(&t.trace, t_p).map_err(lib_err)?;
        *out = QbMetrics {
            rise_time: m.rise_time,
            peak_energy: m.peak_energy,
            peak_power: m.peak_power,
            t_peak: m.t_peak,
            t_half: m.t_half,
        };
        Ok(())
    })
}

/// Absorption at `n` detunings (meV) into `out[0..n]`.
///
/// # Safety
/// `detunings` must hold `n` readable and `out` `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qb_spectrum(model: *const QbModel, detunings: *const f64, n: usize, out: *mut f64) -> QbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if n == 0 {
            return Ok(());
        }
        if detunings.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let grid = std::slice::from_raw_parts(detunings, n);
        let spec = absorption_spectrum(&m.params, grid).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&spec.absorption);
        Ok(())
    })
}

/// Operating regime at photon ratio `r`, using the model's pulse width.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qb_classify_regime(model: *const QbModel, r: f64, out: *mut QbRegimeReport) -> QbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let rep = classify_regime(&m.params, r, m.pulse.width).map_err(lib_err)?;
        *out = QbRegimeReport {
            regime: match rep.regime {
                Regime::DecayDominated => QbRegime::DecayDominated,
                Regime::Crossover => QbRegime::Crossover,
                Regime::CouplingDominated => QbRegime::CouplingDominated,
                Regime::NonResonant => QbRegime::NonResonant,
            },
            effective_coupling: rep.effective_coupling,
            cavity_decay: rep.cavity_decay,
            dephasing: rep.dephasing,
            n_kappa: rep.n_kappa,
            n_gammaz: rep.n_gammaz,
            n_sigma: rep.n_sigma,
        };
        Ok(())
    })
}

/// Exponent `f` with `q_i/q_j = (N_i/N_j)^f`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qb_scaling_exponent(q_i: f64, q_j: f64, n_i: f64, n_j: f64, out: *mut f64) -> QbStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = scaling_exponent(q_i, q_j, n_i, n_j).map_err(lib_err)?;
        Ok(())
    })
}
