use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qbattery::config::RunConfig;

fn qbattery(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbattery"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn qbattery")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run_with(dir: &Path, cmd: &str, config: &str) -> Output {
    let cfg = write_config(dir, config);
    let out = dir.join("out");
    qbattery(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), cmd])
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "simulate", "[model]\ncoupling = 3.0\n");
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("coupling"));
}

#[test]
fn zero_drive_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "simulate", "[pulse]\namplitude = 0.0\n");
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("half max"));
}

#[test]
fn missing_dataset_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "fit", "[[datasets]]\nlabel = \"A1\"\npath = \"nowhere.csv\"\n");
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("nowhere.csv"));
}

#[test]
fn simulate_writes_commented_csv_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "simulate", "[model]\nn_molecules = 1.62e10\n\n[pulse]\nphoton_ratio = 0.16\n");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert!(lines.next().unwrap().starts_with("# qbattery"));
    assert!(trace.lines().any(|l| l == "t_ps,E_meV,Cz,n_photons,n_over_N"));
    let rows = trace.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 4201);

    let resolved = RunConfig::from_toml(&std::fs::read_to_string(out.join("resolved_config.toml")).unwrap()).unwrap();
    assert_eq!(resolved.model.n_molecules, 1.62e10);
    assert_eq!(resolved.out_dir, out);
    let metrics = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(metrics.contains("regime:") && metrics.contains("raw: tau"));
}

#[test]
fn spectrum_and_sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "spectrum", "[model]\nn_molecules = 16.2e10\n");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/spectrum.txt")).unwrap();
    assert!(text.contains("2 peak(s)"), "{text}");

    let o = run_with(dir.path(), "sweep", "[sweep]\naxis = \"r\"\nvalues = [0.1, 0.5, 2.0]\n");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(body[0].starts_with("r,tau_ps,Emax_meV"));
    assert_eq!(body.len(), 4);
    assert!(body[1].starts_with("0.1,"));
}

const SYNTHETIC_FIT: &str = r#"
[fit]
weighting = "scale-model"
g_nev = [9.6, 10.6, 11.6]
gamma0z_mev = [1.5, 1.68, 1.9]
gamma_minus_mev = [0.01, 0.0141, 0.02]

[[datasets]]
label = "A2"
synthetic = { g_nev = 10.6, gamma0z_mev = 1.68, gamma_minus_mev = 0.0141, scale = 2.0, shift_fs = -40.0, noise = 0.1 }
"#;

#[test]
fn synthetic_fit_finds_the_generating_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "fit", SYNTHETIC_FIT);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    let report = std::fs::read_to_string(out.join("fit_report.txt")).unwrap();
    assert!(report.contains("best g = 10.6 neV, gamma0z = 1.68 meV, gamma_minus = 0.0141 meV"), "{report}");
    let map = std::fs::read_to_string(out.join("chi2_map_T120.csv")).unwrap();
    assert_eq!(map.lines().filter(|l| !l.starts_with('#')).count(), 1 + 27);
    let res = std::fs::read_to_string(out.join("residuals_A2_T120.csv")).unwrap();
    assert!(res.lines().any(|l| l == "t_fs,scaled_data,model_meV,residual"));
}

#[test]
fn seed_controls_synthetic_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SYNTHETIC_FIT);
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = qbattery(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed, "fit"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(out.join("chi2_map_T120.csv")).unwrap()
    };
    assert_eq!(run("1", "a"), run("1", "b"));
    assert_ne!(run("1", "a"), run("2", "c"));
}

#[test]
fn oracle_check_passes_and_reports_bracket_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(dir.path(), "oracle-check", "");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = std::fs::read_to_string(dir.path().join("out/oracle_report.txt")).unwrap();
    assert!(!report.contains("FAIL"), "{report}");
    assert!(report.to_lowercase().contains("bracket"), "{report}");
}

#[test]
fn shipped_configs_parse() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = qbattery(&["--config", path.to_str().unwrap(), "print-config"]);
            assert_eq!(code(&o), 0, "{}: {}", path.display(), stderr(&o));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn help_lists_every_subcommand() {
    let o = qbattery(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["simulate", "sweep", "fit", "spectrum", "oracle-check", "reproduce-paper"] {
        assert!(text.contains(cmd), "{cmd} missing from --help");
    }
}
