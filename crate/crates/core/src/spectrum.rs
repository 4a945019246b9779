//! Closed-form polariton absorption spectrum.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// `Ω_eff = √(g²N − (κ − 2γ^tot)²/4)` in meV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectiveRabi {
    Real(f64),
    /// Negative radicand; carries `|Ω_eff|`.
    Overdamped(f64),
}

impl EffectiveRabi {
    pub fn as_complex(self) -> Complex64 {
        match self {
            EffectiveRabi::Real(w) => Complex64::new(w, 0.0),
            EffectiveRabi::Overdamped(w) => Complex64::new(0.0, w),
        }
    }

    pub fn magnitude(self) -> f64 {
        match self {
            EffectiveRabi::Real(w) | EffectiveRabi::Overdamped(w) => w,
        }
    }

    pub fn is_overdamped(self) -> bool {
        matches!(self, EffectiveRabi::Overdamped(_))
    }
}

/// Damping term subtracted from `g²N` under the radical.
///
/// `Consistent` uses `(κ − 2γ^tot)²/16`, the value for which the two
/// denominator factors multiply out to the linear-response denominator
/// `(iΔν − κ/2)(iΔν − γ^tot) + g²N` and the `g = 0` spectrum is a positive
/// Lorentzian. `Printed` uses `(κ − 2γ^tot)²/4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RabiConvention {
    #[default]
    Consistent,
    Printed,
}

pub fn effective_rabi(params: &ModelParams) -> EffectiveRabi {
    effective_rabi_with(params, RabiConvention::Consistent)
}

pub fn effective_rabi_with(params: &ModelParams, convention: RabiConvention) -> EffectiveRabi {
    let d = params.cavity_decay - 2.0 * params.gamma_total();
    let k = match convention {
        RabiConvention::Consistent => 1.0 / 16.0,
        RabiConvention::Printed => 0.25,
    };
    let radicand = params.coupling * params.coupling * params.n_molecules - k * d * d;
    if radicand >= 0.0 {
        EffectiveRabi::Real(radicand.sqrt())
    } else {
        EffectiveRabi::Overdamped((-radicand).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub detunings: Vec<f64>,
    pub absorption: Vec<f64>,
    pub rabi: EffectiveRabi,
    pub gamma_tot: f64,
}

/// `Abs(Δν) = −Re[(iΔν − γ^tot) / ((i(Δν+Ω) − Γ)(i(Δν−Ω) − Γ))]` with
/// `Γ = (2γ^tot + κ)/4`.
pub fn absorption_spectrum(params: &ModelParams, detunings: &[f64]) -> Result<SpectrumResult> {
    absorption_spectrum_with(params, detunings, RabiConvention::Consistent)
}

pub fn absorption_spectrum_with(params: &ModelParams, detunings: &[f64], convention: RabiConvention) -> Result<SpectrumResult> {
    params.validate()?;
    let rabi = effective_rabi_with(params, convention);
    let omega = rabi.as_complex();
    let gt = params.gamma_total();
    let width = 0.25 * (2.0 * gt + params.cavity_decay);
    let i = Complex64::new(0.0, 1.0);
    let absorption = detunings
        .iter()
        .map(|&dv| {
            if !dv.is_finite() {
                return Err(Error::InvalidParameter("detuning grid must be finite".into()));
            }
            let num = Complex64::new(-gt, dv);
            let den = (i * (dv + omega) - width) * (i * (dv - omega) - width);
            if den.norm() == 0.0 {
                return Err(Error::Pole(dv));
            }
            Ok(-(num / den).re)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpectrumResult { detunings: detunings.to_vec(), absorption, rabi, gamma_tot: gt })
}

/// Symmetric grid `-half..=half` with `2·points_per_side + 1` samples.
pub fn symmetric_grid(half: f64, points_per_side: usize) -> Vec<f64> {
    let step = half / points_per_side as f64;
    let n = points_per_side as i64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

/// Detunings of strict local maxima, refined by the parabola through the
/// maximum and its neighbours (plateaus count once, at their midpoint).
pub fn peak_positions(spectrum: &SpectrumResult) -> Vec<f64> {
    let a = &spectrum.absorption;
    let x = &spectrum.detunings;
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < a.len() {
        let mut j = i;
        while j + 1 < a.len() && a[j + 1] == a[i] {
            j += 1;
        }
        let rises = i == 0 || a[i - 1] < a[i];
        let falls = j + 1 == a.len() || a[j + 1] < a[j];
        if rises && falls && i > 0 && j + 1 < a.len() {
            peaks.push(if i == j { parabola_vertex(x[i - 1], x[i], x[i + 1], a[i - 1], a[i], a[i + 1]) } else { 0.5 * (x[i] + x[j]) });
        }
        i = j + 1;
    }
    peaks
}

fn parabola_vertex(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> f64 {
    let (d0, d2) = (x1 - x0, x1 - x2);
    let den = d0 * (y1 - y2) - d2 * (y1 - y0);
    if den == 0.0 {
        return x1;
    }
    let v = x1 - 0.5 * (d0 * d0 * (y1 - y2) - d2 * d2 * (y1 - y0)) / den;
    v.clamp(x0, x2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::N_REF_DEFAULT;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn simple(g2n: f64, kappa: f64, gz: f64) -> ModelParams {
        ModelParams {
            n_molecules: 1.0,
            coupling: g2n.sqrt(),
            cavity_decay: kappa,
            dephasing_base: gz,
            scale_dephasing: false,
            relaxation: 0.0,
            ..ModelParams::default()
        }
    }

    #[test]
    fn rabi_examples() {
        assert_eq!(effective_rabi(&simple(25.0, 2.0, 0.5)), EffectiveRabi::Real(5.0));
        let p = ModelParams { coupling: 0.0, ..simple(1.0, 2.0, 0.2) };
        let w = effective_rabi_with(&p, RabiConvention::Printed);
        assert!(w.is_overdamped());
        assert_relative_eq!(w.magnitude(), (2.0f64 - 0.8).abs() / 2.0, max_relative = 1e-12);
        assert_relative_eq!(effective_rabi(&p).magnitude(), (2.0f64 - 0.8).abs() / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn uncoupled_cavity_is_a_lorentzian() {
        let p = ModelParams { coupling: 0.0, ..simple(1.0, 3.0, 0.2) };
        let grid = symmetric_grid(20.0, 400);
        let s = absorption_spectrum(&p, &grid).unwrap();
        for (dv, a) in grid.iter().zip(&s.absorption) {
            let lorentz = 1.5 / (dv * dv + 1.5 * 1.5);
            assert!((a - lorentz).abs() < 1e-12, "{dv}: {a} vs {lorentz}");
        }
        // the printed damping term gives negative absorption at line centre
        let printed = absorption_spectrum_with(&p, &[0.0], RabiConvention::Printed).unwrap();
        assert!(printed.absorption[0] < 0.0);
    }

    proptest! {
        #[test]
        fn spectrum_is_even(g2n in 0.0f64..100.0, kappa in 0.1f64..10.0, gz in 0.0f64..5.0, half in 1.0f64..50.0) {
            let grid = symmetric_grid(half, 200);
            let s = absorption_spectrum(&simple(g2n, kappa, gz), &grid).unwrap();
            let n = grid.len();
            for k in 0..n {
                prop_assert!((s.absorption[k] - s.absorption[n - 1 - k]).abs() <= 1e-12 * s.absorption[k].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn resolved_peaks_sit_at_the_rabi_frequency() {
        let p = simple(400.0, 2.0, 0.5);
        let step = 0.05;
        let grid = symmetric_grid(40.0, 800);
        let s = absorption_spectrum(&p, &grid).unwrap();
        let w = s.rabi.magnitude();
        let peaks = peak_positions(&s);
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        assert!((peaks[1] - w).abs() <= step && (peaks[0] + w).abs() <= step, "{peaks:?} vs {w}");
    }

    #[test]
    fn continuous_across_the_overdamped_boundary() {
        let kappa = 2.0;
        let gz = 2.0; // κ - 2γ^tot = -6, boundary at g²N = 36/16
        let grid = symmetric_grid(10.0, 50);
        let lo = absorption_spectrum(&simple(2.25 - 1e-9, kappa, gz), &grid).unwrap();
        let hi = absorption_spectrum(&simple(2.25 + 1e-9, kappa, gz), &grid).unwrap();
        assert!(lo.rabi.is_overdamped() && !hi.rabi.is_overdamped());
        for (a, b) in lo.absorption.iter().zip(&hi.absorption) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pole_is_reported() {
        let p = simple(4.0, 0.0, 0.0);
        assert!(matches!(absorption_spectrum(&p, &[2.0]), Err(Error::Pole(_))));
    }

    #[test]
    fn best_fit_concentrations() {
        let grid = symmetric_grid(30.0, 600);
        let count = |n: f64| peak_positions(&absorption_spectrum(&ModelParams::default().with_n(n), &grid).unwrap()).len();
        assert_eq!(count(0.81e10), 1);
        assert_eq!(count(1.62e10), 1);
        assert_eq!(count(N_REF_DEFAULT), 2);
        assert_eq!(count(16.2e10), 2);
    }
}
