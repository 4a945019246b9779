//! CSV output. Every file starts with `#` comment lines describing the run,
//! followed by a header row. Floats use the shortest round-trip form, so
//! identical runs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fit::{residuals, ExperimentDataset, FitResult, Weighting, AXIS_NAMES};
use crate::oracle::interpolate;
use crate::units::fs_to_ps;
use crate::observables::{EnergyTrace, SweepAxis, SweepRow};
use crate::spectrum::SpectrumResult;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn opt(v: &Option<Vec<f64>>, i: usize) -> String {
    v.as_ref().map(|v| f(v[i])).unwrap_or_default()
}

/// Write comment lines, then hand a CSV writer to `body`.
fn write_csv<F>(path: &Path, comments: &[String], header: &[&str], body: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<&mut BufWriter<File>>) -> csv::Result<()>,
{
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for c in comments {
        writeln!(out, "# {c}").map_err(|e| io_err(path, e))?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).map_err(|e| io_err(path, e))?;
        body(&mut w).map_err(|e| io_err(path, e))?;
        w.flush().map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn write_trace(path: &Path, trace: &EnergyTrace, comments: &[String]) -> Result<()> {
    write_csv(path, comments, &["t_ps", "E_meV", "Cz", "n_photons", "n_over_N"], |w| {
        for i in 0..trace.times.len() {
            w.write_record([
                f(trace.times[i]),
                f(trace.energy[i]),
                opt(&trace.inversion, i),
                opt(&trace.photons, i),
                opt(&trace.photon_ratio, i),
            ])?;
        }
        Ok(())
    })
}

pub fn write_sweep(path: &Path, axis: SweepAxis, rows: &[SweepRow], comments: &[String]) -> Result<()> {
    let axis_name = match axis {
        SweepAxis::Molecules => "N",
        SweepAxis::PhotonRatio => "r",
    };
    let header = [axis_name, "tau_ps", "Emax_meV", "Pmax_meV_per_ps", "regime", "N_kappa", "N_gammaz", "N_sigma", "error"];
    write_csv(path, comments, &header, |w| {
        for row in rows {
            let (tau, e, p, err) = match &row.metrics {
                Ok(m) => (f(m.rise_time), f(m.peak_energy), f(m.peak_power), String::new()),
                Err(msg) => (String::new(), String::new(), String::new(), msg.clone()),
            };
            let (regime, nk, nz, ns) = match &row.regime {
                Some(r) => (r.regime.to_string(), f(r.n_kappa), f(r.n_gammaz), f(r.n_sigma)),
                None => Default::default(),
            };
            w.write_record([f(row.axis_value), tau, e, p, regime, nk, nz, ns, err])?;
        }
        Ok(())
    })
}

pub fn write_spectrum(path: &Path, spectrum: &SpectrumResult, comments: &[String]) -> Result<()> {
    write_csv(path, comments, &["delta_nu_meV", "absorption"], |w| {
        for (d, a) in spectrum.detunings.iter().zip(&spectrum.absorption) {
            w.write_record([f(*d), f(*a)])?;
        }
        Ok(())
    })
}

/// Reduced χ² for every grid point, last axis fastest.
pub fn write_chi2_map(path: &Path, fit: &FitResult, comments: &[String]) -> Result<()> {
    write_csv(path, comments, &["g_neV", "gamma0z_meV", "gammaminus_meV", "chi2_reduced"], |w| {
        for (i, chi2) in fit.chi2_map.iter().enumerate() {
            let p = fit.grid.point(i);
            w.write_record([f(p[0]), f(p[1]), f(p[2]), f(*chi2)])?;
        }
        Ok(())
    })
}

/// Scaled data `S·d`, best-fit model `E(t+T0)` (meV) and normalised
/// residual per sample.
pub fn write_residuals(
    path: &Path,
    model: &EnergyTrace,
    dataset: &ExperimentDataset,
    scale: f64,
    shift_fs: f64,
    weighting: Weighting,
    comments: &[String],
) -> Result<()> {
    let res = residuals(model, dataset, scale, shift_fs, weighting)?;
    write_csv(path, comments, &["t_fs", "scaled_data", "model_meV", "residual"], |w| {
        for (i, (t, r)) in res.iter().enumerate() {
            let e = interpolate(&model.times, &model.energy, fs_to_ps(t + shift_fs));
            w.write_record([f(*t), f(scale * dataset.signal[i]), f(e), f(*r)])?;
        }
        Ok(())
    })
}

/// Human-readable fit summary lines (also used as CSV comments).
pub fn fit_summary(fit: &FitResult) -> Vec<String> {
    let mut lines = vec![
        format!("cavity lifetime {} fs (kappa {:.4} meV)", fit.lifetime_fs, fit.kappa_mev),
        format!(
            "best g = {} neV, gamma0z = {} meV, gamma_minus = {} meV",
            fit.best[0], fit.best[1], fit.best[2]
        ),
        format!("reduced chi2 {:.4} with k_eff = {}", fit.chi2_reduced_min, fit.k_eff),
    ];
    for (label, inner) in &fit.per_dataset {
        lines.push(format!(
            "{label}: S = {:.4} ± {:.4}, T0 = {:.1} ± {:.1} fs, chi2 = {:.3} over {} points",
            inner.scale, inner.scale_se, inner.shift_fs, inner.shift_se, inner.chi2, inner.n_points
        ));
    }
    match &fit.confidence {
        Ok(region) => {
            lines.push(format!("68% region: reduced chi2 <= {:.6}", region.threshold));
            for (name, iv) in AXIS_NAMES.iter().zip(&region.intervals) {
                lines.push(format!("{name} in [{}, {}]", iv.lo, iv.hi));
            }
            if region.touches_boundary {
                lines.push("confidence region touches the grid boundary; widen the grid".into());
            }
        }
        Err(msg) => lines.push(format!("no confidence region: {msg}")),
    }
    lines
}
