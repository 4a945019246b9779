//! Physical parameters, the pump envelope and calibration helpers.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::units::{fs_to_ps, lifetime_to_mev, mev_to_rate, nev_to_mev};

/// Molecule number of the 5% cavity, the reference count for the dephasing
/// scaling.
pub const N_REF_DEFAULT: f64 = 8.08e10;

/// Transition energy of the 0-0 line (526 nm) in meV.
pub const TRANSITION_ENERGY_MEV: f64 = 2357.0;

/// Best-fit cavity lifetime in ps.
pub const BEST_FIT_LIFETIME_PS: f64 = 0.120;

/// Best-fit light-matter coupling in neV.
pub const BEST_FIT_G_NEV: f64 = 10.6;

/// Best-fit dephasing constant in meV.
pub const BEST_FIT_GAMMA0Z_MEV: f64 = 1.68;

/// Best-fit non-radiative decay in meV.
pub const BEST_FIT_GAMMA_MINUS_MEV: f64 = 0.0141;

/// Pump pulse standard deviation in ps (20 fs).
pub const PUMP_SIGMA_PS: f64 = 0.020;

/// Parameters of the Dicke Hamiltonian and its dissipators. Energies and
/// rates are in meV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub n_molecules: f64,
    pub coupling: f64,
    pub cavity_decay: f64,
    pub dephasing_base: f64,
    pub dephasing_ref_count: f64,
    /// When false the dephasing rate is `dephasing_base` for every `N`.
    pub scale_dephasing: bool,
    pub relaxation: f64,
    pub detuning_cavity: f64,
    pub detuning_molecule: f64,
    pub transition_energy: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            n_molecules: N_REF_DEFAULT,
            coupling: nev_to_mev(BEST_FIT_G_NEV),
            cavity_decay: lifetime_to_mev(BEST_FIT_LIFETIME_PS),
            dephasing_base: BEST_FIT_GAMMA0Z_MEV,
            dephasing_ref_count: N_REF_DEFAULT,
            scale_dephasing: true,
            relaxation: BEST_FIT_GAMMA_MINUS_MEV,
            detuning_cavity: 0.0,
            detuning_molecule: 0.0,
            transition_energy: TRANSITION_ENERGY_MEV,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.n_molecules,
            self.coupling,
            self.cavity_decay,
            self.dephasing_base,
            self.dephasing_ref_count,
            self.relaxation,
            self.detuning_cavity,
            self.detuning_molecule,
            self.transition_energy,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("model parameters must be finite".into()));
        }
        if self.n_molecules <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "N must be positive, got {}",
                self.n_molecules
            )));
        }
        if self.dephasing_ref_count <= 0.0 {
            return Err(Error::InvalidParameter("N_ref must be positive".into()));
        }
        if self.transition_energy <= 0.0 {
            return Err(Error::InvalidParameter("transition energy must be positive".into()));
        }
        for (name, v) in [
            ("g", self.coupling),
            ("kappa", self.cavity_decay),
            ("gamma0z", self.dephasing_base),
            ("gamma-", self.relaxation),
        ] {
            if v < 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.n_molecules < 1.0 {
            log::warn!("N = {} < 1; continuing with the analytic continuation in N", self.n_molecules);
        }
        Ok(())
    }

    pub fn with_n(mut self, n: f64) -> Self {
        self.n_molecules = n;
        self
    }

    /// Cavity and molecules both detuned to the lower polariton,
    /// `Δ_a = Δ_c = g√N`.
    pub fn lower_polariton_drive(mut self) -> Self {
        let d = self.coupling * self.n_molecules.sqrt();
        self.detuning_cavity = d;
        self.detuning_molecule = d;
        self
    }

    /// Total transverse decay `γ^tot = 2γ^z + γ^-/2` in meV.
    pub fn gamma_total(&self) -> f64 {
        2.0 * effective_dephasing(self) + 0.5 * self.relaxation
    }

    /// Rates converted to ps⁻¹ for the equations of motion.
    pub fn rates(&self) -> Rates {
        let dephasing = effective_dephasing(self);
        Rates {
            n: self.n_molecules,
            g: mev_to_rate(self.coupling),
            kappa: mev_to_rate(self.cavity_decay),
            gamma_z: mev_to_rate(dephasing),
            gamma_minus: mev_to_rate(self.relaxation),
            gamma_tot: mev_to_rate(2.0 * dephasing + 0.5 * self.relaxation),
            delta_c: mev_to_rate(self.detuning_cavity),
            delta_a: mev_to_rate(self.detuning_molecule),
        }
    }
}

/// Model rates in ps⁻¹, with the `N`-dependent dephasing already resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub n: f64,
    pub g: f64,
    pub kappa: f64,
    pub gamma_z: f64,
    pub gamma_minus: f64,
    pub gamma_tot: f64,
    pub delta_c: f64,
    pub delta_a: f64,
}

/// Gaussian pump pulse and instrument response. Times in ps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseParams {
    /// Pulse area; the envelope integrates to this value.
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    /// Standard deviation of the Gaussian instrument response.
    pub response_width: f64,
}

impl Default for PulseParams {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            center: 0.0,
            width: PUMP_SIGMA_PS,
            response_width: BEST_FIT_LIFETIME_PS,
        }
    }
}

impl PulseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.center.is_finite() && self.width.is_finite())
            || !self.response_width.is_finite()
        {
            return Err(Error::InvalidParameter("pulse parameters must be finite".into()));
        }
        if self.width <= 0.0 {
            return Err(Error::InvalidParameter("pulse width must be positive".into()));
        }
        if self.response_width < 0.0 {
            return Err(Error::InvalidParameter("response width must be >= 0".into()));
        }
        if self.amplitude < 0.0 {
            return Err(Error::InvalidParameter("pulse amplitude must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_amplitude(mut self, eta0: f64) -> Self {
        self.amplitude = eta0;
        self
    }

    pub fn peak(&self) -> f64 {
        self.amplitude / (self.width * (2.0 * PI).sqrt())
    }
}

/// `η(t) = η0/(σ√2π)·exp(-½((t-t0)/σ)²)` in ps⁻¹.
pub fn pulse_envelope(pulse: &PulseParams, t: f64) -> f64 {
    let x = (t - pulse.center) / pulse.width;
    pulse.peak() * (-0.5 * x * x).exp()
}

/// Dephasing rate `γ0^z·N_ref/N` (meV), or the bare `γ0^z` when scaling is
/// disabled.
pub fn effective_dephasing(params: &ModelParams) -> f64 {
    if params.scale_dephasing {
        params.dephasing_base * params.dephasing_ref_count / params.n_molecules
    } else {
        params.dephasing_base
    }
}

/// Pulse area that injects `r·N` photons into an empty lossless cavity.
pub fn drive_amplitude_from_photon_ratio(r: f64, n: f64) -> f64 {
    (r * n).sqrt()
}

/// Stored energy per molecule `(ω_a/2)(⟨σ^z⟩ + 1)`.
pub fn energy_density_from_inversion(cz: f64, transition_energy: f64) -> f64 {
    0.5 * transition_energy * (cz + 1.0)
}

/// Molecule count from a Beer–Lambert transmission measurement:
/// `N = -ln(T/T0)·A/σ`. The film thickness cancels.
pub fn estimate_molecule_count(
    fractional_transmission: f64,
    thickness_cm: f64,
    cross_section_cm2: f64,
    beam_area_cm2: f64,
) -> Result<f64> {
    if !(fractional_transmission > 0.0 && fractional_transmission <= 1.0) {
        return Err(Error::Domain(format!(
            "fractional transmission must lie in (0, 1], got {fractional_transmission}"
        )));
    }
    if !(thickness_cm > 0.0 && cross_section_cm2 > 0.0 && beam_area_cm2 > 0.0) {
        return Err(Error::Domain("thickness, cross section and beam area must be positive".into()));
    }
    // alpha = -ln(T/T0)/d, n = alpha/sigma, N = n*A*d
    let alpha = -fractional_transmission.ln() / thickness_cm;
    let density = alpha / cross_section_cm2;
    Ok(density * beam_area_cm2 * thickness_cm)
}

/// Photons entering the cavity, `N_p(1 - R)`.
pub fn photons_in_cavity(pump_photons: f64, reflectivity: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&reflectivity) {
        return Err(Error::Domain(format!("reflectivity must lie in [0, 1], got {reflectivity}")));
    }
    if pump_photons < 0.0 {
        return Err(Error::Domain("pump photon count must be >= 0".into()));
    }
    Ok(pump_photons * (1.0 - reflectivity))
}

/// Pump parameters in user-facing units.
pub fn pulse_from_fs(amplitude: f64, center_fs: f64, width_fs: f64, response_fs: f64) -> PulseParams {
    PulseParams {
        amplitude,
        center: fs_to_ps(center_fs),
        width: fs_to_ps(width_fs),
        response_width: fs_to_ps(response_fs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_pulse() -> PulseParams {
        PulseParams { amplitude: 1.0, center: 0.3, width: 0.02, response_width: 0.0 }
    }

    #[test]
    fn envelope_values() {
        let p = unit_pulse();
        assert_eq!(pulse_envelope(&p.with_amplitude(0.0), 0.31), 0.0);
        let peak = pulse_envelope(&p, 0.3);
        assert_relative_eq!(peak, 19.947_114_020_071_634, max_relative = 1e-12);
        let side = pulse_envelope(&p, 0.32);
        assert_relative_eq!(side, 12.098_536_225_957_168, max_relative = 1e-12);
        assert_relative_eq!(pulse_envelope(&p, 0.28), side, max_relative = 1e-14);
    }

    #[test]
    fn envelope_integrates_to_area() {
        // composite Simpson over t0 ± 8σ
        let p = PulseParams { amplitude: 3.7, ..unit_pulse() };
        let (a, b) = (p.center - 8.0 * p.width, p.center + 8.0 * p.width);
        let n = 2000;
        let h = (b - a) / n as f64;
        let mut s = pulse_envelope(&p, a) + pulse_envelope(&p, b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pulse_envelope(&p, a + i as f64 * h);
        }
        let integral = s * h / 3.0;
        assert!(((integral - 3.7) / 3.7).abs() < 1e-6, "{integral}");
    }

    #[test]
    fn dephasing_scaling() {
        let base = ModelParams { dephasing_base: 1.68, ..ModelParams::default() };
        assert_relative_eq!(effective_dephasing(&base), 1.68, max_relative = 1e-15);
        let doubled = base.with_n(2.0 * base.dephasing_ref_count);
        assert_relative_eq!(effective_dephasing(&doubled), 0.84, max_relative = 1e-15);
        let zero = ModelParams { dephasing_base: 0.0, ..base };
        assert_eq!(effective_dephasing(&zero.with_n(12.0)), 0.0);
        let constant = ModelParams { scale_dephasing: false, ..base };
        assert_eq!(effective_dephasing(&constant.with_n(1e3)), 1.68);
    }

    #[test]
    fn drive_amplitudes() {
        assert_eq!(drive_amplitude_from_photon_ratio(0.0, 1e10), 0.0);
        let a = drive_amplitude_from_photon_ratio(0.14, 1.62e10);
        assert_relative_eq!(a, 2.268e9f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(a, 4.762e4, max_relative = 1e-4);
        let b = drive_amplitude_from_photon_ratio(2.4, 0.81e10);
        assert!((b - 1.394e5).abs() < 50.0, "{b}");
    }

    #[test]
    fn energy_density_values() {
        assert_eq!(energy_density_from_inversion(-1.0, 2357.0), 0.0);
        assert_eq!(energy_density_from_inversion(1.0, 2357.0), 2357.0);
        let e = energy_density_from_inversion(-0.90836, 2357.0);
        assert!((e - 108.0).abs() < 0.01, "{e}");
    }

    #[test]
    fn molecule_count_from_transmission() {
        let sigma = 3.3e-16;
        let area = sigma * 1e10;
        assert_eq!(estimate_molecule_count(1.0, 1e-5, sigma, area).unwrap(), 0.0);
        let n1 = estimate_molecule_count((-1.0f64).exp(), 1.85e-5, sigma, area).unwrap();
        assert_relative_eq!(n1, 1e10, max_relative = 1e-12);
        let n2 = estimate_molecule_count((-2.0f64).exp(), 1.85e-5, sigma, area).unwrap();
        assert_relative_eq!(n2, 2e10, max_relative = 1e-12);
        assert!(estimate_molecule_count(0.0, 1.0, sigma, area).is_err());
        assert!(estimate_molecule_count(1.01, 1.0, sigma, area).is_err());
    }

    #[test]
    fn cavity_photon_fraction() {
        assert_eq!(photons_in_cavity(1e10, 1.0).unwrap(), 0.0);
        assert_eq!(photons_in_cavity(1e10, 0.0).unwrap(), 1e10);
        // 6-8% of the pump enters the cavity
        assert_relative_eq!(photons_in_cavity(100.0, 0.93).unwrap(), 7.0, max_relative = 1e-12);
        assert!(photons_in_cavity(1.0, 1.5).is_err());
        assert!(photons_in_cavity(1.0, -0.1).is_err());
    }

    #[test]
    fn default_rates() {
        let r = ModelParams::default().rates();
        assert_relative_eq!(r.kappa, 1.0 / 0.12, max_relative = 1e-12);
        assert_relative_eq!(r.gamma_tot, r.gamma_z * 2.0 + 0.5 * r.gamma_minus, max_relative = 1e-14);
    }

    #[test]
    fn validation_rejects_bad_values() {
        assert!(ModelParams { n_molecules: 0.0, ..Default::default() }.validate().is_err());
        assert!(ModelParams { coupling: -1.0, ..Default::default() }.validate().is_err());
        assert!(ModelParams { transition_energy: 0.0, ..Default::default() }.validate().is_err());
        assert!(PulseParams { width: 0.0, ..Default::default() }.validate().is_err());
        assert!(PulseParams { response_width: -1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn dephasing_times_n_is_constant(n in 1.0f64..1e14) {
            let p = ModelParams::default();
            let a = effective_dephasing(&p.with_n(n)) * n;
            let b = effective_dephasing(&p) * p.n_molecules;
            prop_assert!(((a - b) / b).abs() < 1e-12);
        }

        #[test]
        fn energy_is_affine(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            let lhs = energy_density_from_inversion(a, 2357.0) + energy_density_from_inversion(b, 2357.0);
            let rhs = 2.0 * energy_density_from_inversion(0.5 * (a + b), 2357.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * 2357.0);
        }

        #[test]
        fn drive_squared_is_photon_number(r in 0.0f64..10.0, n in 1.0f64..1e12) {
            let eta = drive_amplitude_from_photon_ratio(r, n);
            prop_assert!((eta * eta - r * n).abs() <= 1e-12 * (r * n).max(1.0));
        }
    }
}
