//! Moment equations for the driven open Dicke model.
//!
//! The state holds first moments `⟨a⟩, ⟨σ^α⟩` and second moments
//! `⟨a†a⟩, ⟨aa⟩, ⟨aσ^α⟩, ⟨σ^α_i σ^β_j⟩` (with `i ≠ j`). Third moments that
//! appear in the second-order equations are supplied by a [`ThirdMoments`]
//! value: [`closure_third`] builds them with all third cumulants set to zero,
//! while the exact-density-matrix oracle can supply them exactly, which lets
//! the equations themselves be checked independently of the closure.
//!
//! All rates inside this module are angular rates in ps⁻¹ (see
//! [`ModelParams::rates`]).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{energy_density_from_inversion, pulse_envelope, ModelParams, PulseParams, Rates};
use crate::observables::EnergyTrace;
use crate::ode::{integrate_dense, uniform_grid, OdeOptions, OdeSystem, StepWindow};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Number of real degrees of freedom in a [`CumulantState`].
pub const STATE_LEN: usize = 20;

/// First- and second-order moments. Molecule–molecule moments refer to two
/// distinct molecules; `xy`, `xz`, `yz` are symmetric under exchange.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CumulantState {
    pub a: Complex64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub n: f64,
    pub aa: Complex64,
    pub ax: Complex64,
    pub ay: Complex64,
    pub az: Complex64,
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl CumulantState {
    /// Vacuum with every molecule in `|↓⟩`.
    pub fn ground() -> Self {
        Self { z: -1.0, zz: 1.0, ..Default::default() }
    }

    /// Second moments factorised into products of the first moments.
    pub fn factorized(a: Complex64, x: f64, y: f64, z: f64) -> Self {
        Self {
            a,
            x,
            y,
            z,
            n: a.norm_sqr(),
            aa: a * a,
            ax: a * x,
            ay: a * y,
            az: a * z,
            xx: x * x,
            yy: y * y,
            zz: z * z,
            xy: x * y,
            xz: x * z,
            yz: y * z,
        }
    }

    pub fn to_array(&self) -> [f64; STATE_LEN] {
        [
            self.a.re, self.a.im, self.x, self.y, self.z, self.n, self.aa.re, self.aa.im, self.ax.re,
            self.ax.im, self.ay.re, self.ay.im, self.az.re, self.az.im, self.xx, self.yy, self.zz,
            self.xy, self.xz, self.yz,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            a: Complex64::new(v[0], v[1]),
            x: v[2],
            y: v[3],
            z: v[4],
            n: v[5],
            aa: Complex64::new(v[6], v[7]),
            ax: Complex64::new(v[8], v[9]),
            ay: Complex64::new(v[10], v[11]),
            az: Complex64::new(v[12], v[13]),
            xx: v[14],
            yy: v[15],
            zz: v[16],
            xy: v[17],
            xz: v[18],
            yz: v[19],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Largest absolute component difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Third moments entering the second-order equations. Photon–photon–spin
/// entries involve one molecule; photon–spin–spin entries two distinct ones.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThirdMoments {
    pub aax: Complex64,
    pub aay: Complex64,
    pub aaz: Complex64,
    /// `⟨a†a σ^x⟩` (real, stored as complex for uniformity).
    pub adag_ax: Complex64,
    pub adag_ay: Complex64,
    pub adag_az: Complex64,
    pub axx: Complex64,
    pub ayy: Complex64,
    pub azz: Complex64,
    pub axy: Complex64,
    pub axz: Complex64,
    pub ayz: Complex64,
}

/// `⟨ABC⟩ = ⟨AB⟩⟨C⟩ + ⟨A⟩⟨BC⟩ + ⟨AC⟩⟨B⟩ - 2⟨A⟩⟨B⟩⟨C⟩`, i.e. the third
/// cumulant set to zero.
pub fn closure_third(s: &CumulantState) -> ThirdMoments {
    let a = s.a;
    let ac = a.conj();
    let aa_spin = |m: f64, am: Complex64| s.aa * m + 2.0 * a * am - 2.0 * a * a * m;
    let nn_spin = |m: f64, am: Complex64| s.n * m + ac * am + a * am.conj() - 2.0 * a.norm_sqr() * m;
    let a_spin_spin = |m1: f64, am1: Complex64, m2: f64, am2: Complex64, mm: f64| {
        am1 * m2 + a * mm + am2 * m1 - 2.0 * a * m1 * m2
    };
    ThirdMoments {
        aax: aa_spin(s.x, s.ax),
        aay: aa_spin(s.y, s.ay),
        aaz: aa_spin(s.z, s.az),
        adag_ax: nn_spin(s.x, s.ax),
        adag_ay: nn_spin(s.y, s.ay),
        adag_az: nn_spin(s.z, s.az),
        axx: a_spin_spin(s.x, s.ax, s.x, s.ax, s.xx),
        ayy: a_spin_spin(s.y, s.ay, s.y, s.ay, s.yy),
        azz: a_spin_spin(s.z, s.az, s.z, s.az, s.zz),
        axy: a_spin_spin(s.x, s.ax, s.y, s.ay, s.xy),
        axz: a_spin_spin(s.x, s.ax, s.z, s.az, s.xz),
        ayz: a_spin_spin(s.y, s.ay, s.z, s.az, s.yz),
    }
}

/// Reading of the same-molecule bracket in the `⟨aσ^x⟩` equation.
///
/// `Consistent` is `1 + (N-1)⟨σ^xσ^x⟩`, matching the `⟨aσ^y⟩` equation and the
/// Pauli algebra; `Literal` is `N⟨σ^xσ^x⟩`. Only `Consistent` agrees with
/// the exact master equation; `Literal` is kept for the oracle comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AxBracket {
    #[default]
    Consistent,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Closure {
    #[default]
    Cumulant,
    MeanField,
}

impl std::str::FromStr for Closure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cumulant" | "second-order" | "second-order-cumulant" => Ok(Closure::Cumulant),
            "mean-field" | "meanfield" => Ok(Closure::MeanField),
            other => Err(Error::Config(format!("unknown closure '{other}'"))),
        }
    }
}

/// Time derivative of every moment given the third moments `t3` and the
/// instantaneous drive `eta` (ps⁻¹).
pub fn moment_derivative(
    s: &CumulantState,
    t3: &ThirdMoments,
    r: &Rates,
    eta: f64,
    bracket: AxBracket,
) -> CumulantState {
    let Rates { n, g, kappa, gamma_minus: gm, gamma_tot: gt, delta_c: dc, delta_a: da, .. } = *r;
    let half_g = 0.5 * g;
    let nm1 = n - 1.0;
    let cav = I * dc + 0.5 * kappa;

    let a = -cav * s.a - 0.5 * g * n * (I * s.x + s.y) + eta;
    let x = -da * s.y - 2.0 * g * s.az.im - gt * s.x;
    let y = da * s.x - 2.0 * g * s.az.re - gt * s.y;
    let z = 2.0 * g * (s.ay.re + s.ax.im) - gm * (s.z + 1.0);

    let nn = -kappa * s.n - g * n * (s.ax.im + s.ay.re) + 2.0 * eta * s.a.re;
    let aa = -(2.0 * I * dc + kappa) * s.aa - g * n * (I * s.ax + s.ay) + 2.0 * eta * s.a;

    let xx_bracket = match bracket {
        AxBracket::Consistent => 1.0 + nm1 * s.xx,
        AxBracket::Literal => n * s.xx,
    };
    let ax = -(cav + gt) * s.ax - da * s.ay - I * half_g * xx_bracket
        - half_g * (I * s.z + nm1 * s.xy)
        + I * g * (t3.aaz - t3.adag_az)
        + eta * s.x;
    let ay = -(cav + gt) * s.ay + da * s.ax - I * half_g * (-I * s.z + nm1 * s.xy)
        - half_g * (1.0 + nm1 * s.yy)
        - g * (t3.aaz + t3.adag_az)
        + eta * s.y;
    let az = -cav * s.az - gm * (s.az + s.a) - half_g * (-I * s.x + nm1 * s.yz)
        - I * half_g * (I * s.y + nm1 * s.xz)
        + g * (t3.aay + t3.adag_ay)
        - I * g * (t3.aax - t3.adag_ax)
        + eta * s.z;

    let xx = -2.0 * da * s.xy - 4.0 * g * t3.axz.im - 2.0 * gt * s.xx;
    let yy = 2.0 * da * s.xy - 4.0 * g * t3.ayz.re - 2.0 * gt * s.yy;
    let zz = 4.0 * g * (t3.axz.im + t3.ayz.re) - 2.0 * gm * (s.zz + s.z);
    let xy = da * (s.xx - s.yy) - 2.0 * g * (t3.axz.re + t3.ayz.im) - 2.0 * gt * s.xy;
    let xz = -da * s.yz + 2.0 * g * (t3.axy.re + t3.axx.im - t3.azz.im) - gt * s.xz - gm * (s.xz + s.x);
    let yz = da * s.xz + 2.0 * g * (t3.ayy.re - t3.azz.re + t3.axy.im) - gt * s.yz - gm * (s.yz + s.y);

    CumulantState { a, x, y, z, n: nn, aa, ax, ay, az, xx, yy, zz, xy, xz, yz }
}

/// First-order equations with `⟨aσ^α⟩ = ⟨a⟩⟨σ^α⟩`. Only `a, x, y, z` of the
/// result are meaningful.
pub fn meanfield_derivative(s: &CumulantState, r: &Rates, eta: f64) -> CumulantState {
    let az = s.a * s.z;
    let ax = s.a * s.x;
    let ay = s.a * s.y;
    let a = -(I * r.delta_c + 0.5 * r.kappa) * s.a - 0.5 * r.g * r.n * (I * s.x + s.y) + eta;
    let x = -r.delta_a * s.y - 2.0 * r.g * az.im - r.gamma_tot * s.x;
    let y = r.delta_a * s.x - 2.0 * r.g * az.re - r.gamma_tot * s.y;
    let z = 2.0 * r.g * (ay.re + ax.im) - r.gamma_minus * (s.z + 1.0);
    CumulantState { a, x, y, z, ..Default::default() }
}

/// Second-order cumulant right-hand side.
pub fn rhs_cumulant(state: &CumulantState, params: &ModelParams, pulse: &PulseParams, t: f64) -> Result<CumulantState> {
    if !state.is_finite() {
        return Err(Error::NonFinite("cumulant state"));
    }
    let rates = params.rates();
    Ok(moment_derivative(state, &closure_third(state), &rates, pulse_envelope(pulse, t), AxBracket::Consistent))
}

/// Mean-field right-hand side (first-order block only).
pub fn rhs_meanfield(state: &CumulantState, params: &ModelParams, pulse: &PulseParams, t: f64) -> Result<CumulantState> {
    if !state.is_finite() {
        return Err(Error::NonFinite("mean-field state"));
    }
    Ok(meanfield_derivative(state, &params.rates(), pulse_envelope(pulse, t)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub closure: Closure,
    pub t_start: f64,
    pub t_end: f64,
    pub output_dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            closure: Closure::Cumulant,
            t_start: -0.2,
            t_end: 4.0,
            output_dt: 0.001,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: 0.05,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > self.t_start) {
            return Err(Error::InvalidParameter("t_end must exceed t_start".into()));
        }
        if !(self.output_dt > 0.0) || !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) || !(self.max_step > 0.0) {
            return Err(Error::InvalidParameter("output_dt, tolerances and max_step must be positive".into()));
        }
        Ok(())
    }

    pub fn ode_options(&self, pulse: &PulseParams) -> OdeOptions {
        OdeOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
            windows: vec![pulse_window(pulse)],
            ..Default::default()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        uniform_grid(self.t_start, self.t_end, self.output_dt)
    }
}

/// Steps are held to `σ/4` within `t0 ± 8σ`.
pub fn pulse_window(pulse: &PulseParams) -> StepWindow {
    StepWindow {
        start: pulse.center - 8.0 * pulse.width,
        end: pulse.center + 8.0 * pulse.width,
        max_step: 0.25 * pulse.width,
    }
}

/// The moment equations as an [`OdeSystem`], with rates resolved once.
#[derive(Debug, Clone, Copy)]
pub struct CumulantSystem {
    pub rates: Rates,
    pub pulse: PulseParams,
    pub closure: Closure,
    pub bracket: AxBracket,
}

impl CumulantSystem {
    pub fn new(params: &ModelParams, pulse: &PulseParams, closure: Closure) -> Self {
        Self { rates: params.rates(), pulse: *pulse, closure, bracket: AxBracket::Consistent }
    }
}

impl OdeSystem for CumulantSystem {
    fn dim(&self) -> usize {
        match self.closure {
            Closure::Cumulant => STATE_LEN,
            Closure::MeanField => 5,
        }
    }

    fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) -> Result<()> {
        let eta = pulse_envelope(&self.pulse, t);
        match self.closure {
            Closure::Cumulant => {
                let s = CumulantState::from_slice(y);
                let d = moment_derivative(&s, &closure_third(&s), &self.rates, eta, self.bracket);
                dydt.copy_from_slice(&d.to_array());
            }
            Closure::MeanField => {
                let s = CumulantState { a: Complex64::new(y[0], y[1]), x: y[2], y: y[3], z: y[4], ..Default::default() };
                let d = meanfield_derivative(&s, &self.rates, eta);
                dydt.copy_from_slice(&[d.a.re, d.a.im, d.x, d.y, d.z]);
            }
        }
        Ok(())
    }
}

/// Moment time series on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrace {
    pub times: Vec<f64>,
    pub states: Vec<CumulantState>,
    /// First output time with `|C_z| > 1` or a negative photon number.
    pub unphysical_at: Option<f64>,
}

const PHYSICALITY_SLACK: f64 = 1e-6;

/// Integrate from the ground state with the default equation reading.
pub fn integrate(params: &ModelParams, pulse: &PulseParams, config: &SolverConfig) -> Result<MomentTrace> {
    params.validate()?;
    pulse.validate()?;
    config.validate()?;
    let mut system = CumulantSystem::new(params, pulse, config.closure);
    integrate_system(&mut system, config)
}

/// Integrate an explicitly constructed system from the ground state.
pub fn integrate_system(system: &mut CumulantSystem, config: &SolverConfig) -> Result<MomentTrace> {
    let times = config.times();
    let ground = CumulantState::ground();
    let y0: Vec<f64> = match system.closure {
        Closure::Cumulant => ground.to_array().to_vec(),
        Closure::MeanField => vec![0.0, 0.0, 0.0, 0.0, -1.0],
    };
    let mut states = Vec::with_capacity(times.len());
    let closure = system.closure;
    let mut unphysical_at = None;
    integrate_dense(&*system, &y0, &times, &config.ode_options(&system.pulse), |t, y| {
        let s = match closure {
            Closure::Cumulant => CumulantState::from_slice(y),
            Closure::MeanField => CumulantState::factorized(Complex64::new(y[0], y[1]), y[2], y[3], y[4]),
        };
        if !s.is_finite() {
            return Err(Error::Integration { t, reason: "non-finite state".into() });
        }
        if unphysical_at.is_none() && (s.z.abs() > 1.0 + PHYSICALITY_SLACK || s.n < -PHYSICALITY_SLACK) {
            log::debug!("moment state left the physical region at t = {t} ps (Cz = {}, n = {})", s.z, s.n);
            unphysical_at = Some(t);
        }
        states.push(s);
        Ok(())
    })?;
    Ok(MomentTrace { times, states, unphysical_at })
}

/// Stored energy per molecule, photon number and photons per molecule.
pub fn simulate_energy(params: &ModelParams, pulse: &PulseParams, config: &SolverConfig) -> Result<EnergyTrace> {
    let trace = integrate(params, pulse, config)?;
    Ok(energy_from_moments(&trace, params))
}

pub fn energy_from_moments(trace: &MomentTrace, params: &ModelParams) -> EnergyTrace {
    let inversion: Vec<f64> = trace.states.iter().map(|s| s.z).collect();
    let energy = inversion.iter().map(|&z| energy_density_from_inversion(z, params.transition_energy)).collect();
    let photons: Vec<f64> = trace.states.iter().map(|s| s.n).collect();
    let ratio = photons.iter().map(|p| p / params.n_molecules).collect();
    EnergyTrace {
        times: trace.times.clone(),
        energy,
        inversion: Some(inversion),
        photons: Some(photons),
        photon_ratio: Some(ratio),
        unphysical_at: trace.unphysical_at,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::drive_amplitude_from_photon_ratio;
    use crate::units::nev_to_mev;
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::default().with_n(1.62e10)
    }

    #[test]
    fn ground_state_is_stationary() {
        let p = params();
        let pulse = PulseParams::default().with_amplitude(0.0);
        let d = rhs_cumulant(&CumulantState::ground(), &p, &pulse, 0.0).unwrap();
        assert!(d.to_array().iter().all(|v| v.abs() < 1e-14), "{d:?}");
        let d = rhs_meanfield(&CumulantState::ground(), &p, &pulse, 0.0).unwrap();
        assert!(d.to_array().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn ground_state_under_drive() {
        let p = params();
        let pulse = PulseParams::default().with_amplitude(2.0);
        let eta = pulse_envelope(&pulse, 0.0);
        let d = rhs_cumulant(&CumulantState::ground(), &p, &pulse, 0.0).unwrap();
        assert_eq!(d.a, Complex64::new(eta, 0.0));
        assert_eq!(d.az, Complex64::new(-eta, 0.0));
        assert_eq!(d.n, 0.0);
        assert_eq!(d.aa, Complex64::new(0.0, 0.0));
        assert_eq!(d.ax, Complex64::new(0.0, 0.0));
        assert_eq!(d.ay, Complex64::new(0.0, 0.0));
        for v in [d.x, d.y, d.z, d.xx, d.yy, d.zz, d.xy, d.xz, d.yz] {
            assert_eq!(v, 0.0);
        }
    }

    proptest! {
        #[test]
        fn meanfield_is_the_factorised_cumulant_block(
            ar in -3.0f64..3.0, ai in -3.0f64..3.0,
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            t in -0.05f64..0.05,
        ) {
            let p = ModelParams { detuning_cavity: 0.7, detuning_molecule: -0.3, ..params() };
            let pulse = PulseParams::default();
            let s = CumulantState::factorized(Complex64::new(ar, ai), x, y, z);
            let c = rhs_cumulant(&s, &p, &pulse, t).unwrap();
            let m = rhs_meanfield(&s, &p, &pulse, t).unwrap();
            let scale = 1.0 + c.a.norm() + c.x.abs() + c.y.abs() + c.z.abs();
            prop_assert!((c.a - m.a).norm() <= 1e-12 * scale);
            prop_assert!((c.x - m.x).abs() <= 1e-12 * scale);
            prop_assert!((c.y - m.y).abs() <= 1e-12 * scale);
            prop_assert!((c.z - m.z).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn uncoupled_molecules_stay_in_the_ground_state() {
        let p = ModelParams { coupling: 0.0, ..params() };
        let pulse = PulseParams::default().with_amplitude(drive_amplitude_from_photon_ratio(0.14, p.n_molecules));
        let tr = integrate(&p, &pulse, &SolverConfig { t_end: 1.0, ..Default::default() }).unwrap();
        for s in &tr.states {
            assert!((s.z + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn impulsive_drive_injects_r_n_photons() {
        let n = 1.62e10;
        let r = 0.14;
        let p = ModelParams { coupling: 0.0, cavity_decay: 0.0, n_molecules: n, ..ModelParams::default() };
        let pulse = PulseParams::default().with_amplitude(drive_amplitude_from_photon_ratio(r, n));
        let tr = integrate(&p, &pulse, &SolverConfig { t_end: 0.3, ..Default::default() }).unwrap();
        let last = tr.states.last().unwrap();
        assert!(((last.n - r * n) / (r * n)).abs() < 1e-7, "{}", last.n);
    }

    #[test]
    fn zero_drive_gives_zero_energy() {
        let pulse = PulseParams::default().with_amplitude(0.0);
        let e = simulate_energy(&params(), &pulse, &SolverConfig { t_end: 1.0, ..Default::default() }).unwrap();
        assert!(e.energy.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moment_trace_is_uniform_and_deterministic() {
        let p = params();
        let pulse = PulseParams::default().with_amplitude(drive_amplitude_from_photon_ratio(0.14, p.n_molecules));
        let cfg = SolverConfig { t_end: 1.0, ..Default::default() };
        let a = integrate(&p, &pulse, &cfg).unwrap();
        let b = integrate(&p, &pulse, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(a.times.len(), a.states.len());
    }

    #[test]
    fn coupling_dominated_energy_oscillates() {
        // deep coupling-dominated: weak decay, g√N ≫ κ, γ^z
        let p = ModelParams {
            n_molecules: 4e11,
            coupling: nev_to_mev(10.6),
            cavity_decay: 0.2,
            dephasing_base: 0.05,
            dephasing_ref_count: 4e11,
            ..ModelParams::default()
        };
        let pulse = PulseParams::default().with_amplitude(drive_amplitude_from_photon_ratio(0.14, p.n_molecules));
        let e = simulate_energy(&p, &pulse, &SolverConfig { t_end: 2.0, ..Default::default() }).unwrap();
        let local_maxima = e.energy.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count();
        assert!(local_maxima >= 3, "{local_maxima}");
    }

    #[test]
    fn closure_parses() {
        assert_eq!("mean-field".parse::<Closure>().unwrap(), Closure::MeanField);
        assert!("third".parse::<Closure>().is_err());
    }
}
