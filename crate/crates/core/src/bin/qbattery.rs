use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use qbattery::config::RunConfig;
use qbattery::cumulant::{energy_from_moments, integrate};
use qbattery::fit::{
    global_fit, global_fit_refined, known_experiment, load_dataset, synthetic_dataset, ExperimentDataset, FitResult,
};
use qbattery::io;
use qbattery::observables::{charging_metrics, classify_regime, convolve_response, sweep, ChargingMetrics};
use qbattery::spectrum::{absorption_spectrum_with, effective_rabi_with, peak_positions, symmetric_grid, EffectiveRabi};
use qbattery::validation::{
    bracket_comparison, cavity_check, peak_counts, reported_exponents, reproduce_experiments, simulate_metrics,
    CONCENTRATION_SERIES, REPORTED_EXPONENTS,
};
use qbattery::{Error, Result};

/// Simulate, sweep and fit the driven dissipative Dicke quantum battery.
#[derive(Debug, Parser)]
#[command(name = "qbattery", version)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps and fits.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for synthetic noise.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one charging trace and report its metrics.
    Simulate,
    /// Charging metrics along a molecule-number or photon-ratio axis.
    Sweep,
    /// Global chi-squared fit of the configured datasets.
    Fit,
    /// Linear absorption spectrum.
    Spectrum,
    /// Compare the moment equations with the exact master equation.
    OracleCheck,
    /// Compare simulations with the published experiments; fits the
    /// configured datasets when there are any.
    ReproducePaper,
    /// Print the resolved configuration.
    PrintConfig,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Fit => "fit",
            Command::Spectrum => "spectrum",
            Command::OracleCheck => "oracle-check",
            Command::ReproducePaper => "reproduce-paper",
            Command::PrintConfig => "print-config",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    if let Command::PrintConfig = cli.command {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("resolved_config.toml"), cfg.to_toml()?)?;
    let ctx = Ctx { cfg, command: cli.command.name() };
    match cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Sweep => run_sweep(&ctx),
        Command::Fit => run_fit(&ctx).map(|_| ()),
        Command::Spectrum => spectrum(&ctx),
        Command::OracleCheck => oracle_check(&ctx),
        Command::ReproducePaper => reproduce(&ctx),
        Command::PrintConfig => unreachable!(),
    }
}

struct Ctx {
    cfg: RunConfig,
    command: &'static str,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn comments(&self, extra: &[String]) -> Vec<String> {
        let mut c = vec![format!("qbattery {} {}", env!("CARGO_PKG_VERSION"), self.command)];
        c.extend_from_slice(extra);
        c
    }
}

/// Print and save a plain-text report.
fn emit_report(path: &Path, text: &str) -> Result<()> {
    print!("{text}");
    std::fs::write(path, text)?;
    Ok(())
}

fn metrics_line(kind: &str, m: &ChargingMetrics) -> String {
    format!(
        "{kind}: tau = {:.4} ps, E_max = {:.4} meV, P_max = {:.4} meV/ps (t_half {:.4} ps, t_peak {:.4} ps)",
        m.rise_time, m.peak_energy, m.peak_power, m.t_half, m.t_peak
    )
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let params = ctx.cfg.model_params()?;
    let pulse = ctx.cfg.pulse_params(params.n_molecules)?;
    let solver = ctx.cfg.solver_config()?;
    let raw = energy_from_moments(&integrate(&params, &pulse, &solver)?, &params);
    let convolved = convolve_response(&raw, pulse.response_width)?;
    if let Some(t) = raw.unphysical_at {
        warn!("moments left the physical region at t = {t} ps (|Cz| > 1 or negative photon number)");
    }
    let head = ctx.comments(&[format!(
        "N = {}, g = {} neV, eta0 = {}, closure = {}",
        params.n_molecules, ctx.cfg.model.coupling_nev, pulse.amplitude, ctx.cfg.solver.closure
    )]);
    io::write_trace(&ctx.path("trace.csv"), &raw, &head)?;
    io::write_trace(&ctx.path("trace_convolved.csv"), &convolved, &head)?;

    let mut report = String::new();
    let r = pulse.amplitude * pulse.amplitude / params.n_molecules;
    if let Ok(reg) = classify_regime(&params, r, pulse.width) {
        writeln!(report, "regime: {} (g*sqrt(N r') = {:.4} meV, kappa = {:.4} meV, gamma_z = {:.4} meV)", reg.regime, reg.effective_coupling, reg.cavity_decay, reg.dephasing).ok();
    }
    let m_raw = charging_metrics(&raw, pulse.center)?;
    writeln!(report, "{}", metrics_line("raw", &m_raw)).ok();
    let m_conv = charging_metrics(&convolved, pulse.center)?;
    writeln!(report, "{}", metrics_line("convolved", &m_conv)).ok();
    emit_report(&ctx.path("metrics.txt"), &report)
}

fn run_sweep(ctx: &Ctx) -> Result<()> {
    let params = ctx.cfg.model_params()?;
    let pulse = ctx.cfg.pulse_params(params.n_molecules)?;
    let solver = ctx.cfg.solver_config()?;
    let spec = ctx.cfg.sweep_spec()?;
    let rows = sweep(&params, &spec, &pulse, &solver)?;
    let failed = rows.iter().filter(|r| r.metrics.is_err()).count();
    let head = ctx.comments(&[format!("photon_ratio = {}, lower_polariton = {}", spec.photon_ratio, spec.lower_polariton)]);
    io::write_sweep(&ctx.path("sweep.csv"), spec.axis, &rows, &head)?;
    println!("{} points written to {}", rows.len(), ctx.path("sweep.csv").display());
    if failed > 0 {
        warn!("{failed} sweep points failed; see the error column");
    }
    Ok(())
}

fn spectrum(ctx: &Ctx) -> Result<()> {
    let params = ctx.cfg.model_params()?;
    let convention = ctx.cfg.spectrum_convention()?;
    let grid = symmetric_grid(ctx.cfg.spectrum.half_width_mev, ctx.cfg.spectrum.points_per_side);
    let spec = absorption_spectrum_with(&params, &grid, convention)?;
    let rabi = effective_rabi_with(&params, convention);
    let head = ctx.comments(&[format!("N = {}, convention = {}", params.n_molecules, ctx.cfg.spectrum.convention)]);
    io::write_spectrum(&ctx.path("spectrum.csv"), &spec, &head)?;
    let peaks = peak_positions(&spec);
    let mut report = String::new();
    match rabi {
        EffectiveRabi::Real(w) => writeln!(report, "effective Rabi frequency {w:.4} meV"),
        EffectiveRabi::Overdamped(w) => writeln!(report, "overdamped (imaginary Rabi frequency {w:.4} meV)"),
    }
    .ok();
    writeln!(report, "{} peak(s) at {:?} meV", peaks.len(), peaks).ok();
    emit_report(&ctx.path("spectrum.txt"), &report)
}

fn load_datasets(ctx: &Ctx) -> Result<Vec<ExperimentDataset>> {
    let cfg = &ctx.cfg;
    if cfg.datasets.is_empty() {
        return Err(Error::Config("no [[datasets]] configured".into()));
    }
    cfg.datasets
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let meta = d.meta();
            match (&d.synthetic, &d.path) {
                (Some(s), None) => {
                    let lifetime = s.lifetime_fs.or(cfg.fit.lifetimes_fs.first().copied()).unwrap_or(120.0);
                    let opts = cfg.fit_options(lifetime)?;
                    let truth = [s.g_nev, s.gamma0z_mev, s.gamma_minus_mev];
                    let seed = cfg.seed.wrapping_add(i as u64);
                    synthetic_dataset(&meta, s.times_fs()?, truth, s.scale, s.shift_fs, s.noise, &opts, seed)
                }
                (None, Some(p)) => load_dataset(p, &meta).map_err(|e| match e {
                    Error::Io(io) => Error::Data(format!("{}: {io}", p.display())),
                    other => other,
                }),
                _ => Err(Error::Config(format!("dataset '{}' needs exactly one of path or synthetic", d.label))),
            }
        })
        .collect()
}

fn run_fit(ctx: &Ctx) -> Result<Vec<FitResult>> {
    let datasets = load_datasets(ctx)?;
    let grid = ctx.cfg.fit_grid()?;
    if ctx.cfg.fit.lifetimes_fs.is_empty() {
        return Err(Error::Config("fit.lifetimes_fs is empty".into()));
    }
    let mut results = Vec::new();
    let mut report = String::new();
    for &lifetime in &ctx.cfg.fit.lifetimes_fs {
        let opts = ctx.cfg.fit_options(lifetime)?;
        info!("fitting {} datasets on {} grid points at T = {lifetime} fs", datasets.len(), grid.len());
        let fit = if ctx.cfg.fit.refine > 1 {
            global_fit_refined(&datasets, &grid, &opts, ctx.cfg.fit.refine)?.1
        } else {
            global_fit(&datasets, &grid, &opts)?
        };
        let tag = format!("T{lifetime}");
        let summary = io::fit_summary(&fit);
        io::write_chi2_map(&ctx.path(&format!("chi2_map_{tag}.csv")), &fit, &ctx.comments(&summary))?;
        for (ds, (_, inner)) in datasets.iter().zip(&fit.per_dataset) {
            let model = opts.model_trace(fit.best, ds)?;
            let path = ctx.path(&format!("residuals_{}_{tag}.csv", ds.label));
            io::write_residuals(&path, &model, ds, inner.scale, inner.shift_fs, opts.inner.weighting, &ctx.comments(&[]))?;
        }
        if let Err(msg) = &fit.confidence {
            warn!("T = {lifetime} fs: {msg}");
        }
        for line in &summary {
            writeln!(report, "{line}").ok();
        }
        writeln!(report).ok();
        results.push(fit);
    }
    if let Some(best) = results.iter().min_by(|a, b| a.chi2_reduced_min.total_cmp(&b.chi2_reduced_min)) {
        writeln!(report, "smallest reduced chi2 {:.4} at T = {} fs", best.chi2_reduced_min, best.lifetime_fs).ok();
    }
    emit_report(&ctx.path("fit_report.txt"), &report)?;
    Ok(results)
}

fn oracle_check(ctx: &Ctx) -> Result<()> {
    const PEAK_TOLERANCE: f64 = 0.02;
    let solver = ctx.cfg.solver_config()?;
    let suite = ctx.cfg.oracle.suite(&solver);
    let mut report = String::new();
    let mut all_pass = true;

    writeln!(report, "weak drive (eta0 = {}), energy peak error relative to the master equation:", suite.amplitude).ok();
    let cases = suite.run()?;
    let mut csv = String::from("N,coupling_over_kappa,cumulant_peak_rel_error,meanfield_peak_rel_error,cumulant_max_rel_error,pass\n");
    for c in &cases {
        let pass = c.passes(PEAK_TOLERANCE);
        all_pass &= pass;
        writeln!(
            report,
            "  N={} g*sqrt(N)/kappa={:<5} cumulant {:.3e}  mean-field {:.3e}  {}",
            c.n_molecules,
            c.coupling_over_kappa,
            c.cumulant.peak_rel_error,
            c.mean_field.peak_rel_error,
            if pass { "PASS" } else { "FAIL" }
        )
        .ok();
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            c.n_molecules, c.coupling_over_kappa, c.cumulant.peak_rel_error, c.mean_field.peak_rel_error, c.cumulant.max_rel_error, pass
        )
        .ok();
    }
    std::fs::write(ctx.path("oracle_cases.csv"), csv)?;

    writeln!(report, "molecule-photon bracket in d<a sx>/dt, derivative mismatch on random states:").ok();
    for n in [2usize, 3] {
        let b = bracket_comparison(n, 5, ctx.cfg.seed)?;
        writeln!(
            report,
            "  N={n}: 1+(N-1)Cxx {:.2e} (peak {:.2e}), N*Cxx {:.2e} (peak {:.2e}) -> {:?} matches",
            b.consistent_error, b.consistent_peak_error, b.literal_error, b.literal_peak_error, b.preferred()
        )
        .ok();
    }

    let cav = cavity_check(&solver)?;
    all_pass &= cav.passes();
    writeln!(
        report,
        "uncoupled cavity vs quadrature: max |dC_a| {:.3e} (tolerance {:.3e}) {}",
        cav.max_error,
        cav.tolerance,
        if cav.passes() { "PASS" } else { "FAIL" }
    )
    .ok();
    emit_report(&ctx.path("oracle_report.txt"), &report)?;
    if all_pass {
        Ok(())
    } else {
        Err(Error::Domain("oracle check failed".into()))
    }
}

fn reproduce(ctx: &Ctx) -> Result<()> {
    let base = ctx.cfg.model_params()?;
    let pulse = ctx.cfg.pulse_params(base.n_molecules)?;
    let solver = ctx.cfg.solver_config()?;
    let mut report = String::new();

    writeln!(report, "charging metrics, simulated vs reported (tau ps, E_max eV, P_max eV/ps):").ok();
    writeln!(report, "  eta0 = sqrt(r N) with r = cavity photons / molecules").ok();
    let rows = reproduce_experiments(&base, &pulse, &solver, |k| k.photon_ratio())?;
    let mut csv = String::from("label,N,r,tau_ps,Emax_eV,Pmax_eV_per_ps,tau_reported,Emax_reported,Pmax_reported\n");
    for row in &rows {
        let (s, r) = (row.simulated, row.reported);
        let e = row.relative_errors();
        writeln!(
            report,
            "  {} r={:.3}: tau {:.4}/{:.3} ({:+.0}%)  E {:.4}/{:.3} ({:+.0}%)  P {:.4}/{:.3} ({:+.0}%)",
            row.label,
            row.photon_ratio,
            s.0,
            r.0,
            100.0 * e.0 * (s.0 - r.0).signum(),
            s.1,
            r.1,
            100.0 * e.1 * (s.1 - r.1).signum(),
            s.2,
            r.2,
            100.0 * e.2 * (s.2 - r.2).signum()
        )
        .ok();
        writeln!(csv, "{},{},{},{},{},{},{},{},{}", row.label, row.n_dye, row.photon_ratio, s.0, s.1, s.2, r.0, r.1, r.2).ok();
    }
    std::fs::write(ctx.path("experiments.csv"), csv)?;
    if let Some(b2) = known_experiment("B2") {
        let m = simulate_metrics(&base.with_n(b2.n_dye), &pulse, 2.4, &solver)?;
        writeln!(report, "  B2 at r=2.4: tau {:.4}, E {:.4}, P {:.4}", m.rise_time, m.peak_energy / 1000.0, m.peak_power / 1000.0).ok();
    }

    writeln!(report, "scaling exponents (f_tau, f_E, f_P):").ok();
    for (a, b, published) in REPORTED_EXPONENTS {
        let (ka, kb) = (known_experiment(a).unwrap(), known_experiment(b).unwrap());
        let from_reported = reported_exponents(ka, kb)?;
        let sim = |l: &str| rows.iter().find(|r| r.label == l).unwrap().simulated;
        let (sa, sb) = (sim(a), sim(b));
        let f = |x: f64, y: f64| qbattery::observables::scaling_exponent(x, y, ka.n_dye, kb.n_dye);
        let simulated = (f(sa.0, sb.0)?, f(sa.1, sb.1)?, f(sa.2, sb.2)?);
        writeln!(
            report,
            "  {a}/{b}: published ({:.2}, {:.2}, {:.2}), from reported metrics ({:.2}, {:.2}, {:.2}), simulated ({:.2}, {:.2}, {:.2})",
            published.0, published.1, published.2, from_reported.0, from_reported.1, from_reported.2, simulated.0, simulated.1, simulated.2
        )
        .ok();
    }

    writeln!(report, "absorption peaks by concentration:").ok();
    let ns: Vec<f64> = CONCENTRATION_SERIES.iter().map(|c| c.1).collect();
    let counts = peak_counts(&base, &ns, ctx.cfg.spectrum.half_width_mev, ctx.cfg.spectrum.points_per_side)?;
    for ((label, n), count) in CONCENTRATION_SERIES.iter().zip(&counts) {
        writeln!(report, "  {label} (N = {n:e}): {count} peak(s)").ok();
    }
    emit_report(&ctx.path("reproduce_report.txt"), &report)?;

    if ctx.cfg.datasets.is_empty() {
        println!("no [[datasets]] configured; skipping the global fit");
        Ok(())
    } else {
        run_fit(ctx).map(|_| ())
    }
}
