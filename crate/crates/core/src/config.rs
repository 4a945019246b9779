//! TOML run configuration. Physical inputs use lab units (neV, meV, fs);
//! conversion to internal units happens in the `resolve_*` methods.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cumulant::{Closure, SolverConfig};
use crate::error::{Error, Result};
use crate::fit::{DatasetMeta, FitGrid, FitOptions, InnerFitOptions};
use crate::model::{self, drive_amplitude_from_photon_ratio, ModelParams, PulseParams};
use crate::observables::{geometric_grid, SweepAxis, SweepSpec};
use crate::spectrum::RabiConvention;
use crate::units::{fs_to_ps, lifetime_to_mev, nev_to_mev};
use crate::validation::OracleSuite;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory (overridden by `--out`).
    pub out_dir: PathBuf,
    /// Seed for synthetic noise (overridden by `--seed`).
    pub seed: u64,
    pub model: ModelSection,
    pub pulse: PulseSection,
    pub solver: SolverSection,
    pub sweep: SweepSection,
    pub spectrum: SpectrumSection,
    pub fit: FitSection,
    pub datasets: Vec<DatasetSection>,
    pub oracle: OracleSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: 0,
            model: ModelSection::default(),
            pulse: PulseSection::default(),
            solver: SolverSection::default(),
            sweep: SweepSection::default(),
            spectrum: SpectrumSection::default(),
            fit: FitSection::default(),
            datasets: Vec::new(),
            oracle: OracleSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_molecules: f64,
    pub coupling_nev: f64,
    pub cavity_lifetime_fs: f64,
    pub dephasing_mev: f64,
    pub dephasing_ref_count: f64,
    pub scale_dephasing: bool,
    pub relaxation_mev: f64,
    pub detuning_cavity_mev: f64,
    pub detuning_molecule_mev: f64,
    pub transition_energy_mev: f64,
    /// Set both detunings to `g√N`.
    pub lower_polariton: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            n_molecules: model::N_REF_DEFAULT,
            coupling_nev: model::BEST_FIT_G_NEV,
            cavity_lifetime_fs: 1000.0 * model::BEST_FIT_LIFETIME_PS,
            dephasing_mev: model::BEST_FIT_GAMMA0Z_MEV,
            dephasing_ref_count: model::N_REF_DEFAULT,
            scale_dephasing: true,
            relaxation_mev: model::BEST_FIT_GAMMA_MINUS_MEV,
            detuning_cavity_mev: 0.0,
            detuning_molecule_mev: 0.0,
            transition_energy_mev: model::TRANSITION_ENERGY_MEV,
            lower_polariton: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    /// Pump photons per molecule; sets the pulse area to `√(rN)`.
    pub photon_ratio: f64,
    /// Explicit pulse area; overrides `photon_ratio`.
    pub amplitude: Option<f64>,
    pub center_fs: f64,
    pub width_fs: f64,
    /// Instrument response width; the cavity lifetime when absent.
    pub response_fs: Option<f64>,
}

impl Default for PulseSection {
    fn default() -> Self {
        Self { photon_ratio: 0.14, amplitude: None, center_fs: 0.0, width_fs: 1000.0 * model::PUMP_SIGMA_PS, response_fs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// `cumulant` or `mean-field`.
    pub closure: String,
    pub t_start_ps: f64,
    pub t_end_ps: f64,
    pub output_dt_ps: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step_ps: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            closure: "cumulant".into(),
            t_start_ps: s.t_start,
            t_end_ps: s.t_end,
            output_dt_ps: s.output_dt,
            rel_tol: s.rel_tol,
            abs_tol: s.abs_tol,
            max_step_ps: s.max_step,
        }
    }
}

/// Explicit values, or `count` points between `lo` and `hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    Values(Vec<f64>),
    Range {
        lo: f64,
        hi: f64,
        count: usize,
        #[serde(default)]
        linear: bool,
    },
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            AxisSpec::Values(v) => v.clone(),
            AxisSpec::Range { lo, hi, count, linear } => {
                if *count == 0 || !(hi >= lo) {
                    return Err(Error::Config("range needs count ≥ 1 and hi ≥ lo".into()));
                }
                if *linear {
                    if *count == 1 {
                        vec![*lo]
                    } else {
                        (0..*count).map(|i| lo + (hi - lo) * i as f64 / (*count - 1) as f64).collect()
                    }
                } else {
                    if !(*lo > 0.0) {
                        return Err(Error::Config("geometric range needs lo > 0".into()));
                    }
                    geometric_grid(*lo, *hi, *count)
                }
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("axis values must be finite and non-empty".into()));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// `N` or `r`.
    pub axis: String,
    pub values: AxisSpec,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { axis: "N".into(), values: AxisSpec::Range { lo: 1e8, hi: 1e12, count: 9, linear: false } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub half_width_mev: f64,
    pub points_per_side: usize,
    /// `consistent` or `printed`.
    pub convention: String,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { half_width_mev: 30.0, points_per_side: 600, convention: "consistent".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub lifetimes_fs: Vec<f64>,
    pub g_nev: AxisSpec,
    pub gamma0z_mev: AxisSpec,
    pub gamma_minus_mev: AxisSpec,
    /// Refinement factor for a second pass around the minimum (0 = off).
    pub refine: usize,
    pub shift_window_fs: f64,
    pub coarse_step_fs: f64,
    /// "scale-data" (S·d − E) or "scale-model" (d − E/S).
    pub weighting: String,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            lifetimes_fs: vec![120.0],
            g_nev: AxisSpec::Range { lo: 2.0, hi: 50.0, count: 9, linear: false },
            gamma0z_mev: AxisSpec::Range { lo: 0.2, hi: 10.0, count: 9, linear: false },
            gamma_minus_mev: AxisSpec::Range { lo: 0.001, hi: 1.0, count: 7, linear: false },
            refine: 0,
            shift_window_fs: 400.0,
            coarse_step_fs: 10.0,
            weighting: "scale-data".into(),
        }
    }
}

/// Noisy data generated from the model instead of read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub g_nev: f64,
    pub gamma0z_mev: f64,
    pub gamma_minus_mev: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub shift_fs: f64,
    pub noise: f64,
    /// Cavity lifetime of the generating model; the first fit lifetime
    /// when absent.
    #[serde(default)]
    pub lifetime_fs: Option<f64>,
    #[serde(default = "default_t_start_fs")]
    pub t_start_fs: f64,
    #[serde(default = "default_t_end_fs")]
    pub t_end_fs: f64,
    #[serde(default = "default_step_fs")]
    pub step_fs: f64,
}

fn one() -> f64 {
    1.0
}
fn default_t_start_fs() -> f64 {
    -400.0
}
fn default_t_end_fs() -> f64 {
    2000.0
}
fn default_step_fs() -> f64 {
    10.0
}

impl SyntheticSection {
    pub fn times_fs(&self) -> Result<Vec<f64>> {
        if !(self.step_fs > 0.0) || !(self.t_end_fs > self.t_start_fs) {
            return Err(Error::Config("synthetic time range needs step_fs > 0 and t_end_fs > t_start_fs".into()));
        }
        let n = ((self.t_end_fs - self.t_start_fs) / self.step_fs + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.t_start_fs + i as f64 * self.step_fs).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub label: String,
    /// CSV with `t_fs, dR_over_R`; relative paths resolve against the
    /// config file.
    pub path: Option<PathBuf>,
    pub n_dye: Option<f64>,
    pub r: Option<f64>,
    pub window_bounds_fs: Option<Vec<f64>>,
    pub window_sigmas: Option<Vec<f64>>,
    pub response_fs: Option<f64>,
    pub synthetic: Option<SyntheticSection>,
}

impl DatasetSection {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            label: self.label.clone(),
            n_dye: self.n_dye,
            r: self.r,
            window_bounds: self.window_bounds_fs.clone(),
            window_sigmas: self.window_sigmas.clone(),
            response_width: self.response_fs.map(fs_to_ps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub n_molecules: Vec<usize>,
    pub fock_cutoff: usize,
    pub amplitude: f64,
    /// Collective couplings `g√N` as multiples of κ.
    pub coupling_over_kappa: Vec<f64>,
    pub cavity_decay_mev: f64,
    pub dephasing_mev: f64,
    pub relaxation_mev: f64,
    pub t_end_ps: f64,
    pub output_dt_ps: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            n_molecules: vec![1, 2],
            fock_cutoff: 8,
            amplitude: 0.05,
            coupling_over_kappa: vec![0.1, 1.0, 10.0],
            cavity_decay_mev: 2.0,
            dephasing_mev: 1.0,
            relaxation_mev: 0.05,
            t_end_ps: 3.0,
            output_dt_ps: 0.002,
        }
    }
}

impl OracleSection {
    pub fn suite(&self, solver: &SolverConfig) -> OracleSuite {
        OracleSuite {
            n_molecules: self.n_molecules.clone(),
            fock_cutoff: self.fock_cutoff,
            amplitude: self.amplitude,
            coupling_over_kappa: self.coupling_over_kappa.clone(),
            cavity_decay: self.cavity_decay_mev,
            dephasing: self.dephasing_mev,
            relaxation: self.relaxation_mev,
            solver: SolverConfig { t_start: -0.2, t_end: self.t_end_ps, output_dt: self.output_dt_ps, ..*solver },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            for d in &mut cfg.datasets {
                if let Some(p) = &d.path {
                    if p.is_relative() {
                        d.path = Some(dir.join(p));
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let m = &self.model;
        if !(m.cavity_lifetime_fs > 0.0) {
            return Err(Error::Config("cavity_lifetime_fs must be positive".into()));
        }
        let p = ModelParams {
            n_molecules: m.n_molecules,
            coupling: nev_to_mev(m.coupling_nev),
            cavity_decay: lifetime_to_mev(fs_to_ps(m.cavity_lifetime_fs)),
            dephasing_base: m.dephasing_mev,
            dephasing_ref_count: m.dephasing_ref_count,
            scale_dephasing: m.scale_dephasing,
            relaxation: m.relaxation_mev,
            detuning_cavity: m.detuning_cavity_mev,
            detuning_molecule: m.detuning_molecule_mev,
            transition_energy: m.transition_energy_mev,
        };
        let p = if m.lower_polariton { p.lower_polariton_drive() } else { p };
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }

    /// Pulse for a given molecule number (the area depends on `N`).
    pub fn pulse_params(&self, n_molecules: f64) -> Result<PulseParams> {
        let p = &self.pulse;
        let pulse = PulseParams {
            amplitude: p.amplitude.unwrap_or_else(|| drive_amplitude_from_photon_ratio(p.photon_ratio, n_molecules)),
            center: fs_to_ps(p.center_fs),
            width: fs_to_ps(p.width_fs),
            response_width: fs_to_ps(p.response_fs.unwrap_or(self.model.cavity_lifetime_fs)),
        };
        pulse.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(pulse)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let cfg = SolverConfig {
            closure: s.closure.parse::<Closure>()?,
            t_start: s.t_start_ps,
            t_end: s.t_end_ps,
            output_dt: s.output_dt_ps,
            rel_tol: s.rel_tol,
            abs_tol: s.abs_tol,
            max_step: s.max_step_ps,
        };
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        Ok(SweepSpec {
            axis: self.sweep.axis.parse::<SweepAxis>()?,
            grid: self.sweep.values.values()?,
            photon_ratio: self.pulse.photon_ratio,
            lower_polariton: self.model.lower_polariton,
        })
    }

    pub fn spectrum_convention(&self) -> Result<RabiConvention> {
        match self.spectrum.convention.as_str() {
            "consistent" => Ok(RabiConvention::Consistent),
            "printed" => Ok(RabiConvention::Printed),
            other => Err(Error::Config(format!("unknown spectrum convention '{other}'"))),
        }
    }

    pub fn fit_grid(&self) -> Result<FitGrid> {
        Ok(FitGrid {
            g_nev: self.fit.g_nev.values()?,
            gamma0z_mev: self.fit.gamma0z_mev.values()?,
            gamma_minus_mev: self.fit.gamma_minus_mev.values()?,
        })
    }

    pub fn fit_options(&self, lifetime_fs: f64) -> Result<FitOptions> {
        let base = self.model_params()?;
        let mut pulse = self.pulse_params(base.n_molecules)?;
        pulse.response_width = fs_to_ps(lifetime_fs);
        Ok(FitOptions {
            lifetime_fs,
            base,
            pulse,
            solver: self.solver_config()?,
            inner: InnerFitOptions {
                shift_window_fs: self.fit.shift_window_fs,
                coarse_step_fs: self.fit.coarse_step_fs,
                weighting: self.fit.weighting.parse()?,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_to_best_fit() {
        let cfg = RunConfig::from_toml("").unwrap();
        let p = cfg.model_params().unwrap();
        assert_eq!(p, ModelParams::default());
        let pulse = cfg.pulse_params(1.62e10).unwrap();
        assert!((pulse.amplitude - (0.14f64 * 1.62e10).sqrt()).abs() < 1e-6);
        assert_eq!(cfg.solver_config().unwrap(), SolverConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[model]\ncoupling = 3\n"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[nonsense]\n"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let text = r#"
[model]
n_molecules = 1.62e10
[sweep]
axis = "r"
values = [0.01, 0.1, 1.0]
[fit]
g_nev = { lo = 5.0, hi = 20.0, count = 4 }
[[datasets]]
label = "A3"
path = "a3.csv"
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.sweep_spec().unwrap().axis, SweepAxis::PhotonRatio);
        assert_eq!(cfg.fit_grid().unwrap().g_nev.len(), 4);
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn bad_closure_is_a_config_error() {
        let cfg = RunConfig::from_toml("[solver]\nclosure = \"third\"\n").unwrap();
        assert!(matches!(cfg.solver_config(), Err(Error::Config(_))));
    }
}
