//! Charging metrics, instrument-response convolution, regime boundaries and
//! parameter sweeps.

use std::fmt;

use rayon::prelude::*;

use crate::cumulant::{simulate_energy, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{drive_amplitude_from_photon_ratio, effective_dephasing, ModelParams, PulseParams};
use crate::units::HBAR;

/// Energy per molecule (meV) on a uniform time grid (ps).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// Mean inversion `⟨σ^z⟩`.
    pub inversion: Option<Vec<f64>>,
    pub photons: Option<Vec<f64>>,
    /// Photons per molecule.
    pub photon_ratio: Option<Vec<f64>>,
    /// Set when the moments left the physical region (first time, ps).
    pub unphysical_at: Option<f64>,
}

impl EnergyTrace {
    pub fn new(times: Vec<f64>, energy: Vec<f64>) -> Self {
        Self { times, energy, ..Default::default() }
    }

    /// Grid spacing, or an error if the grid is not uniform.
    pub fn step(&self) -> Result<f64> {
        uniform_step(&self.times)
    }
}

/// Spacing of a uniform grid (relative tolerance 1e-6).
pub fn uniform_step(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::NonUniformGrid);
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::NonUniformGrid);
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::NonUniformGrid);
        }
    }
    Ok(dt)
}

/// Convolve with a normalised Gaussian of standard deviation `sigma_r`
/// truncated at ±5σ, extending edge values. Only the energy is carried over.
pub fn convolve_response(trace: &EnergyTrace, sigma_r: f64) -> Result<EnergyTrace> {
    if !(sigma_r >= 0.0) {
        return Err(Error::InvalidParameter("response width must be non-negative".into()));
    }
    if sigma_r == 0.0 {
        return Ok(trace.clone());
    }
    let dt = trace.step()?;
    let half = (5.0 * sigma_r / dt).floor() as isize;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|k| {
            let x = k as f64 * dt / sigma_r;
            (-0.5 * x * x).exp()
        })
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= norm);

    // edge-extended copy so every output is a plain dot product
    let e = &trace.energy;
    let h = half as usize;
    let mut padded = Vec::with_capacity(e.len() + 2 * h);
    padded.extend(std::iter::repeat_n(e[0], h));
    padded.extend_from_slice(e);
    padded.extend(std::iter::repeat_n(e[e.len() - 1], h));
    let energy = (0..e.len()).map(|i| dot(&kernel, &padded[i..i + kernel.len()])).collect();
    Ok(EnergyTrace { unphysical_at: trace.unphysical_at, ..EnergyTrace::new(trace.times.clone(), energy) })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargingMetrics {
    /// `t_half - t_p` in ps.
    pub rise_time: f64,
    pub peak_energy: f64,
    pub peak_power: f64,
    pub t_peak: f64,
    pub t_half: f64,
}

/// Rise time, peak energy and peak power relative to pump arrival `t_p`.
///
/// `t_half` is the first upward crossing of `E_max/2` after `t_p`. If the
/// trace is already above half maximum at `t_p`, the latest upward crossing
/// before `t_p` is used (negative rise time), or `t_p` itself when the trace
/// never crosses from below. A `t_p` before the grid is clamped to the first
/// sample.
pub fn charging_metrics(trace: &EnergyTrace, t_p: f64) -> Result<ChargingMetrics> {
    let (t, e) = (&trace.times, &trace.energy);
    if t.is_empty() || t.len() != e.len() {
        return Err(Error::InvalidParameter("empty or mismatched trace".into()));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("energy trace"));
    }
    let (imax, &peak) = e
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
    if !(peak > 0.0) {
        return Err(Error::UndefinedHalfMax);
    }
    let half = 0.5 * peak;
    let last = t.len() - 1;
    if t_p > t[last] {
        return Err(Error::InvalidParameter("pump arrival after the end of the trace".into()));
    }
    let tp = t_p.max(t[0]);

    let peak_power = if t.len() < 3 {
        if t.len() == 2 { (e[1] - e[0]) / (t[1] - t[0]) } else { 0.0 }
    } else {
        (1..last).map(|i| (e[i + 1] - e[i - 1]) / (t[i + 1] - t[i - 1])).fold(f64::NEG_INFINITY, f64::max)
    };

    // first index with t[i] > tp; segment (k-1, k) brackets tp
    let k = t.partition_point(|&ti| ti <= tp);
    let e_at = |x: f64| -> f64 {
        if k == 0 || k > last {
            return e[k.min(last)];
        }
        let f = (x - t[k - 1]) / (t[k] - t[k - 1]);
        e[k - 1] + f * (e[k] - e[k - 1])
    };
    let e_p = e_at(tp);
    let cross = |t0: f64, e0: f64, t1: f64, e1: f64| t0 + (half - e0) / (e1 - e0) * (t1 - t0);

    let t_half = if e_p < half {
        let mut found = None;
        let (mut t0, mut e0) = (tp, e_p);
        for i in k..=last {
            if e[i] >= half {
                found = Some(cross(t0, e0, t[i], e[i]));
                break;
            }
            t0 = t[i];
            e0 = e[i];
        }
        found.ok_or(Error::UndefinedHalfMax)?
    } else {
        let mut found = tp;
        let (mut t1, mut e1) = (tp, e_p);
        for i in (0..k).rev() {
            if e[i] < half {
                found = cross(t[i], e[i], t1, e1);
                break;
            }
            t1 = t[i];
            e1 = e[i];
        }
        found
    };

    Ok(ChargingMetrics { rise_time: t_half - t_p.max(t[0]), peak_energy: peak, peak_power, t_peak: t[imax], t_half })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    DecayDominated,
    Crossover,
    CouplingDominated,
    NonResonant,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::DecayDominated => "decay-dominated",
            Regime::Crossover => "crossover",
            Regime::CouplingDominated => "coupling-dominated",
            Regime::NonResonant => "non-resonant",
        })
    }
}

/// Rates (meV) and boundary molecule counts behind a [`Regime`]. Infinite
/// counts mean the boundary is never reached (e.g. `g = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeReport {
    pub regime: Regime,
    /// `g√(N·max(1, r))`.
    pub effective_coupling: f64,
    pub cavity_decay: f64,
    pub dephasing: f64,
    pub relaxation: f64,
    /// `(2/5)^{1/4}·ħ/σ`.
    pub bandwidth_threshold: f64,
    pub n_kappa: f64,
    pub n_gammaz: f64,
    pub n_sigma: f64,
}

/// Compare the collective coupling with the decay rates and the pump
/// bandwidth.
pub fn classify_regime(params: &ModelParams, r: f64, sigma: f64) -> Result<RegimeReport> {
    params.validate()?;
    if !(sigma > 0.0) || !(r >= 0.0) {
        return Err(Error::InvalidParameter("σ must be positive and r non-negative".into()));
    }
    let rp = r.max(1.0);
    let g2 = params.coupling * params.coupling * rp;
    let x = (g2 * params.n_molecules).sqrt();
    let kappa = params.cavity_decay;
    let gz = effective_dephasing(params);
    let bandwidth = 0.4f64.powf(0.25) * HBAR / sigma;
    let over = |num: f64| if g2 > 0.0 { num / g2 } else { f64::INFINITY };
    let n_kappa = over(kappa * kappa);
    let n_gammaz = if params.scale_dephasing {
        let c = params.dephasing_base * params.dephasing_ref_count;
        over(c * c).cbrt()
    } else {
        over(params.dephasing_base * params.dephasing_base)
    };
    let n_sigma = if params.coupling != 0.0 { (bandwidth / params.coupling).powi(2) } else { f64::INFINITY };

    let regime = if params.n_molecules > n_sigma {
        Regime::NonResonant
    } else if x < kappa.min(gz) {
        Regime::DecayDominated
    } else if x > kappa.max(gz) {
        Regime::CouplingDominated
    } else {
        Regime::Crossover
    };
    Ok(RegimeReport {
        regime,
        effective_coupling: x,
        cavity_decay: kappa,
        dephasing: gz,
        relaxation: params.relaxation,
        bandwidth_threshold: bandwidth,
        n_kappa,
        n_gammaz,
        n_sigma,
    })
}

/// Exponent `f` with `q_i/q_j = (N_i/N_j)^f`.
pub fn scaling_exponent(q_i: f64, q_j: f64, n_i: f64, n_j: f64) -> Result<f64> {
    let q = q_i / q_j;
    let n = n_i / n_j;
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::Domain(format!("observable ratio {q} is not positive")));
    }
    if !(n > 0.0) || n == 1.0 || !n.is_finite() {
        return Err(Error::Domain(format!("molecule ratio {n} must be positive and differ from 1")));
    }
    Ok(q.ln() / n.ln())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter("need at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("log-log slope needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Molecule number at fixed photon ratio.
    Molecules,
    /// Photon ratio at fixed molecule number.
    PhotonRatio,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" | "n" | "molecules" => Ok(SweepAxis::Molecules),
            "r" | "ratio" | "photon_ratio" => Ok(SweepAxis::PhotonRatio),
            other => Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    /// Photon ratio used when sweeping `N`.
    pub photon_ratio: f64,
    /// Tune both detunings to the lower polariton, `Δ_a = Δ_c = g√N`.
    pub lower_polariton: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub metrics: std::result::Result<ChargingMetrics, String>,
    pub regime: Option<RegimeReport>,
}

/// One simulation per grid point, in parallel; rows keep grid order. The
/// drive area is `√(rN)` and metrics use the unconvolved trace with the pump
/// centre as arrival time.
pub fn sweep(template: &ModelParams, spec: &SweepSpec, pulse: &PulseParams, config: &SolverConfig) -> Result<Vec<SweepRow>> {
    if spec.grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    if spec.grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("sweep grid must be ascending".into()));
    }
    Ok(spec
        .grid
        .par_iter()
        .map(|&v| {
            let (params, r) = match spec.axis {
                SweepAxis::Molecules => (template.with_n(v), spec.photon_ratio),
                SweepAxis::PhotonRatio => (*template, v),
            };
            let params = if spec.lower_polariton { params.lower_polariton_drive() } else { params };
            let pulse = pulse.with_amplitude(drive_amplitude_from_photon_ratio(r, params.n_molecules));
            let metrics = simulate_energy(&params, &pulse, config)
                .inspect(|tr| {
                    if let Some(t) = tr.unphysical_at {
                        log::warn!("sweep point {v}: moments left the physical region at t = {t} ps");
                    }
                })
                .and_then(|tr| charging_metrics(&tr, pulse.center))
                .map_err(|e| e.to_string());
            if let Err(msg) = &metrics {
                log::warn!("sweep point {v} failed: {msg}");
            }
            SweepRow { axis_value: v, metrics, regime: classify_regime(&params, r, pulse.width).ok() }
        })
        .collect())
}

/// `count` points spaced geometrically from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|i| lo * (ratio * i as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::nev_to_mev;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
        crate::ode::uniform_grid(t0, t1, dt)
    }

    #[test]
    fn convolution_identity_and_zero() {
        let t = grid(0.0, 1.0, 0.01);
        let e: Vec<f64> = t.iter().map(|x| x.sin()).collect();
        let tr = EnergyTrace::new(t.clone(), e);
        assert_eq!(convolve_response(&tr, 0.0).unwrap(), tr);
        let z = EnergyTrace::new(t.clone(), vec![0.0; t.len()]);
        assert!(convolve_response(&z, 0.12).unwrap().energy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn convolution_of_a_step() {
        let t = grid(-1.0, 1.0, 0.001);
        let e: Vec<f64> = t.iter().map(|&x| if x > 0.0 { 1.0 } else if x == 0.0 { 0.5 } else { 0.0 }).collect();
        let c = convolve_response(&EnergyTrace::new(t.clone(), e), 0.12).unwrap();
        let i0 = t.iter().position(|x| x.abs() < 1e-12).unwrap();
        assert!((c.energy[i0] - 0.5).abs() < 1e-3);
        let at = |level: f64| {
            let i = c.energy.iter().position(|&v| v >= level).unwrap();
            t[i - 1] + (level - c.energy[i - 1]) / (c.energy[i] - c.energy[i - 1]) * 0.001
        };
        let rise = at(0.9) - at(0.1);
        assert!((rise / 0.12 - 2.563).abs() < 0.01, "{}", rise / 0.12);
    }

    #[test]
    fn non_uniform_grid_is_rejected() {
        let tr = EnergyTrace::new(vec![0.0, 1.0, 3.0], vec![0.0; 3]);
        assert!(matches!(convolve_response(&tr, 0.1), Err(Error::NonUniformGrid)));
    }

    #[test]
    fn convolution_conserves_interior_area() {
        let t = grid(-2.0, 2.0, 0.002);
        let e: Vec<f64> = t.iter().map(|x| (-(x * x) / 0.02).exp() * (1.0 + x)).collect();
        let c = convolve_response(&EnergyTrace::new(t, e.clone()), 0.12).unwrap();
        let a: f64 = e.iter().sum();
        let b: f64 = c.energy.iter().sum();
        assert!(((a - b) / a).abs() < 1e-6);
        let max_in = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(c.energy.iter().all(|v| v.abs() <= max_in + 1e-15));
    }

    #[test]
    fn saturating_exponential_metrics() {
        let tau_c = 0.1;
        let t = grid(-0.5, 3.0, 0.0005);
        let e: Vec<f64> = t.iter().map(|&x| if x > 0.0 { 2.0 * (1.0 - (-x / tau_c).exp()) } else { 0.0 }).collect();
        let m = charging_metrics(&EnergyTrace::new(t, e), 0.0).unwrap();
        assert_relative_eq!(m.rise_time, tau_c * 2f64.ln(), max_relative = 1e-4);
        assert_relative_eq!(m.peak_energy, 2.0, max_relative = 1e-9);
        assert_relative_eq!(m.peak_power, 2.0 / tau_c, max_relative = 5e-3);
    }

    #[test]
    fn plateau_gives_zero_rise_time() {
        let t = grid(0.0, 1.0, 0.01);
        let tr = EnergyTrace::new(t.clone(), vec![3.0; t.len()]);
        let m = charging_metrics(&tr, -0.5).unwrap();
        assert_eq!(m.rise_time, 0.0);
        assert_eq!(m.peak_energy, 3.0);
    }

    #[test]
    fn early_rise_gives_negative_rise_time() {
        let t = grid(-1.0, 1.0, 0.01);
        let e: Vec<f64> = t.iter().map(|&x| 1.0 / (1.0 + (-(x + 0.3) / 0.02).exp())).collect();
        let m = charging_metrics(&EnergyTrace::new(t, e), 0.0).unwrap();
        assert!((m.rise_time + 0.3).abs() < 1e-3, "{}", m.rise_time);
    }

    #[test]
    fn zero_trace_has_no_half_maximum() {
        let t = grid(0.0, 1.0, 0.1);
        let tr = EnergyTrace::new(t.clone(), vec![0.0; t.len()]);
        assert!(matches!(charging_metrics(&tr, 0.0), Err(Error::UndefinedHalfMax)));
    }

    proptest! {
        #[test]
        fn metrics_are_translation_invariant(shift in -2.0f64..2.0, tau_c in 0.05f64..0.3) {
            let dt = 0.001;
            let base = grid(0.0, 2.0, dt);
            let e: Vec<f64> = base.iter().map(|&x| if x > 0.5 { 1.0 - (-(x - 0.5) / tau_c).exp() } else { 0.0 }).collect();
            let m0 = charging_metrics(&EnergyTrace::new(base.clone(), e.clone()), 0.5).unwrap();
            let moved: Vec<f64> = base.iter().map(|x| x + shift).collect();
            let m1 = charging_metrics(&EnergyTrace::new(moved, e), 0.5 + shift).unwrap();
            prop_assert!((m0.rise_time - m1.rise_time).abs() < 1e-9);
            prop_assert!((m0.peak_power - m1.peak_power).abs() < 1e-6 * m0.peak_power);
        }

        #[test]
        fn exponent_is_antisymmetric(qi in 0.01f64..10.0, qj in 0.01f64..10.0, ni in 1e8f64..1e12, nj in 1e8f64..1e12) {
            prop_assume!((ni / nj - 1.0).abs() > 1e-6);
            let a = scaling_exponent(qi, qj, ni, nj).unwrap();
            let b = scaling_exponent(qj, qi, nj, ni).unwrap();
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn exponent_examples() {
        assert_eq!(scaling_exponent(1.0, 1.0, 2.0, 1.0).unwrap(), 0.0);
        assert!((scaling_exponent(0.094, 0.120, 16.20e10, 8.08e10).unwrap() + 0.35).abs() < 0.005);
        assert!((scaling_exponent(0.184, 0.037, 1.62e10, 0.81e10).unwrap() - 2.31).abs() < 0.005);
        assert!(scaling_exponent(-1.0, 1.0, 2.0, 1.0).is_err());
        assert!(scaling_exponent(1.0, 2.0, 1.0, 1.0).is_err());
        assert!(scaling_exponent(1.0, 2.0, -1.0, 1.0).is_err());
    }

    fn gamma_setup(n: f64) -> ModelParams {
        ModelParams {
            n_molecules: n,
            coupling: nev_to_mev(10.6),
            cavity_decay: 2.0,
            dephasing_base: 2.0,
            relaxation: 2.0,
            scale_dephasing: false,
            ..ModelParams::default()
        }
    }

    #[test]
    fn regime_examples() {
        let g0 = ModelParams { coupling: 0.0, ..ModelParams::default() };
        let rep = classify_regime(&g0, 0.14, 0.02).unwrap();
        assert_eq!(rep.regime, Regime::DecayDominated);
        assert!(rep.n_kappa.is_infinite() && rep.n_sigma.is_infinite());

        let rep = classify_regime(&gamma_setup(1e10), 0.5, 0.02).unwrap();
        assert_relative_eq!(rep.n_kappa, 3.56e10, max_relative = 1e-3);
        assert_eq!(rep.n_kappa, rep.n_gammaz);
        assert_eq!(rep.regime, Regime::DecayDominated);
        assert_eq!(classify_regime(&gamma_setup(1e11), 0.5, 0.02).unwrap().regime, Regime::CouplingDominated);

        let rep = classify_regime(&ModelParams::default(), 0.14, 0.02).unwrap();
        assert_relative_eq!(rep.n_sigma, 6.1e12, max_relative = 0.01);
        assert!(rep.n_sigma > rep.n_gammaz);
        let big = ModelParams::default().with_n(1e13);
        assert_eq!(classify_regime(&big, 0.14, 0.02).unwrap().regime, Regime::NonResonant);
    }

    #[test]
    fn kappa_boundary_flips_label() {
        // κ below γ^z at the boundary so that N_κ separates decay and crossover
        let p = ModelParams { cavity_decay: 1.0, dephasing_base: 3.0, scale_dephasing: false, ..gamma_setup(1.0) };
        let nk = classify_regime(&p, 1.0, 0.02).unwrap().n_kappa;
        let below = classify_regime(&p.with_n(nk * (1.0 - 1e-6)), 1.0, 0.02).unwrap();
        let above = classify_regime(&p.with_n(nk * (1.0 + 1e-6)), 1.0, 0.02).unwrap();
        assert_eq!(below.regime, Regime::DecayDominated);
        assert_eq!(above.regime, Regime::Crossover);
    }

    #[test]
    fn scaled_dephasing_boundary_is_self_consistent() {
        let p = ModelParams::default();
        let rep = classify_regime(&p, 0.14, 0.02).unwrap();
        let at = p.with_n(rep.n_gammaz);
        let x = p.coupling * rep.n_gammaz.sqrt();
        assert_relative_eq!(x, effective_dephasing(&at), max_relative = 1e-10);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert_relative_eq!(log_log_slope(&x, &y).unwrap(), -0.5, epsilon = 1e-12);
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let spec = SweepSpec { axis: SweepAxis::Molecules, grid: vec![2.0, 1.0], photon_ratio: 0.1, lower_polariton: false };
        assert!(sweep(&ModelParams::default(), &spec, &PulseParams::default(), &SolverConfig::default()).is_err());
    }
}
