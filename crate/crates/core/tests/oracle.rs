use nalgebra::DMatrix;
use num_complex::Complex64;
use qbattery::cumulant::{
    closure_third, integrate, moment_derivative, AxBracket, Closure, CumulantState, SolverConfig,
};
use qbattery::model::{ModelParams, PulseParams, Rates};
use qbattery::oracle::{
    analytic_cavity_field, compare_cumulant, evolve_exact, DensityMatrix, Observable, OracleConfig, OracleSpace,
};
use qbattery::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rates(n: f64) -> Rates {
    Rates {
        n,
        g: 0.37,
        kappa: 0.9,
        gamma_z: 0.21,
        gamma_minus: 0.13,
        gamma_tot: 2.0 * 0.21 + 0.5 * 0.13,
        delta_c: 0.4,
        delta_a: -0.25,
    }
}

/// Random permutation-symmetric density matrix with photons only up to
/// `max_photons`.
fn random_state(space: &OracleSpace, max_photons: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let d = space.dim;
    let spins = 1usize << space.n_molecules;
    let support = (max_photons + 1) * spins;
    let m = DMatrix::from_fn(d, d, |r, _| {
        if r < support {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let rho = &m * m.adjoint();
    let rho = space.symmetrize(&rho);
    let tr = rho.trace();
    rho / tr
}

fn relative_mismatch(a: &CumulantState, b: &CumulantState) -> f64 {
    let scale = a.to_array().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

#[test]
fn moment_equations_match_the_master_equation_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (n_mol, cutoff) in [(2usize, 6usize), (3, 5)] {
        let space = OracleSpace::new(n_mol, cutoff).unwrap();
        let r = rates(n_mol as f64);
        let gen = space.lindbladian(&r);
        for trial in 0..5 {
            let rho = random_state(&space, cutoff - 2, &mut rng);
            DensityMatrix { entries: rho.clone() }.check_invariants().unwrap();
            let eta = 0.3 * trial as f64;
            let exact = space.expectations(&gen.apply_matrix(&rho, eta));
            let s = space.expectations(&rho);
            let t3 = space.third_moments(&rho);
            let model = moment_derivative(&s, &t3, &r, eta, AxBracket::Consistent);
            let err = relative_mismatch(&exact, &model);
            assert!(err < 1e-12, "N={n_mol} trial {trial}: {err:e}\nexact {exact:?}\nmodel {model:?}");
        }
    }
}

#[test]
fn literal_bracket_disagrees_with_the_master_equation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n_mol, cutoff) in [(2usize, 6usize), (3, 5)] {
        let space = OracleSpace::new(n_mol, cutoff).unwrap();
        let r = rates(n_mol as f64);
        let gen = space.lindbladian(&r);
        let rho = random_state(&space, cutoff - 2, &mut rng);
        let exact = space.expectations(&gen.apply_matrix(&rho, 0.2));
        let s = space.expectations(&rho);
        let t3 = space.third_moments(&rho);
        let literal = moment_derivative(&s, &t3, &r, 0.2, AxBracket::Literal);
        assert!((literal.ax - exact.ax).norm() > 1e-3, "N={n_mol}");
    }
}

#[test]
fn closure_is_exact_for_product_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let space = OracleSpace::new(2, 6).unwrap();
    for _ in 0..3 {
        // photon state on Fock ≤ 4, identical single-molecule states
        let pm = DMatrix::from_fn(7, 7, |r, _| {
            if r <= 4 { Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) } else { Complex64::new(0.0, 0.0) }
        });
        let ph = &pm * pm.adjoint();
        let ph = &ph / ph.trace();
        let sm = DMatrix::from_fn(2, 2, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let sp = &sm * sm.adjoint();
        let sp = &sp / sp.trace();
        let spins = sp.kronecker(&sp);
        let rho = ph.kronecker(&spins);
        let third = space.third_moments(&rho);
        let closed = closure_third(&space.expectations(&rho));
        let pairs = [
            (third.aax, closed.aax),
            (third.aaz, closed.aaz),
            (third.adag_ay, closed.adag_ay),
            (third.axz, closed.axz),
            (third.ayy, closed.ayy),
            (third.axy, closed.axy),
        ];
        for (a, b) in pairs {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }
}

fn weak_config(n_mol: usize, g: f64) -> OracleConfig {
    let params = ModelParams {
        coupling: g,
        cavity_decay: 2.0,
        dephasing_base: 0.8,
        scale_dephasing: false,
        relaxation: 0.05,
        ..ModelParams::default()
    };
    OracleConfig {
        n_molecules: n_mol,
        fock_cutoff: 6,
        params,
        pulse: PulseParams::default().with_amplitude(0.05),
        solver: SolverConfig { t_end: 1.5, output_dt: 0.005, ..SolverConfig::default() },
        initial_photons: 0,
        check_positivity: true,
    }
}

#[test]
fn density_matrix_stays_physical_and_symmetric() {
    let out = evolve_exact(&OracleConfig { fock_cutoff: 5, ..weak_config(2, 1.5) }).unwrap();
    assert!(out.max_trace_error < 1e-8, "{}", out.max_trace_error);
    assert!(out.min_eigenvalue.unwrap() > -1e-8);
    assert!(out.moments.iter().any(|m| m.z > -1.0 + 1e-6));
}

#[test]
fn resting_single_molecule_is_stationary() {
    let mut cfg = weak_config(1, 0.0);
    cfg.pulse = cfg.pulse.with_amplitude(0.0);
    let out = evolve_exact(&cfg).unwrap();
    assert!(out.max_trace_error < 1e-12);
    for m in &out.moments {
        assert!(m.max_abs_diff(&CumulantState { zz: 0.0, ..CumulantState::ground() }) < 1e-14);
    }
}

#[test]
fn vacuum_rabi_oscillation() {
    let g = 1.3; // meV
    let params = ModelParams {
        coupling: g,
        cavity_decay: 0.0,
        dephasing_base: 0.0,
        relaxation: 0.0,
        scale_dephasing: false,
        ..ModelParams::default()
    };
    let cfg = OracleConfig {
        n_molecules: 1,
        fock_cutoff: 2,
        params,
        pulse: PulseParams::default().with_amplitude(0.0),
        solver: SolverConfig { t_start: 0.0, t_end: 3.0, output_dt: 0.01, ..SolverConfig::default() },
        initial_photons: 1,
        check_positivity: false,
    };
    let omega = 2.0 * params.rates().g;
    let out = evolve_exact(&cfg).unwrap();
    for (t, m) in out.times.iter().zip(&out.moments) {
        assert!((m.z + (omega * t).cos()).abs() < 1e-7, "t={t}: {} vs {}", m.z, -(omega * t).cos());
    }
}

#[test]
fn driven_empty_cavity_matches_quadrature() {
    let mut cfg = weak_config(1, 0.0);
    cfg.params.detuning_cavity = 0.7;
    cfg.pulse = cfg.pulse.with_amplitude(0.3);
    cfg.fock_cutoff = 7;
    cfg.solver.rel_tol = 1e-10;
    cfg.solver.abs_tol = 1e-12;
    let out = evolve_exact(&cfg).unwrap();
    let field = analytic_cavity_field(&cfg.model(), &cfg.pulse, &out.times);
    for (m, a) in out.moments.iter().zip(&field) {
        assert!((m.n - a.norm_sqr()).abs() < 1e-8, "{} vs {}", m.n, a.norm_sqr());
        assert!((m.a - a).norm() < 1e-8);
    }
}

#[test]
fn truncation_is_checked() {
    let mut cfg = weak_config(1, 0.0);
    cfg.fock_cutoff = 2;
    cfg.pulse = cfg.pulse.with_amplitude(1.5);
    assert!(matches!(evolve_exact(&cfg), Err(Error::TruncationInadequate { .. })));
    cfg.n_molecules = 3;
    cfg.fock_cutoff = 9;
    assert!(matches!(evolve_exact(&cfg), Err(Error::DimensionCap { .. })));
}

#[test]
fn weak_drive_two_molecules_within_two_percent() {
    let cfg = weak_config(2, 1.0);
    let out = evolve_exact(&cfg).unwrap();
    let trace = integrate(&cfg.model(), &cfg.pulse, &cfg.solver).unwrap();
    let cmp = compare_cumulant(&out, &trace, Observable::Energy).unwrap();
    assert!(cmp.peak_rel_error < 0.02, "{cmp:?}");
}

#[test]
fn cumulant_beats_mean_field_at_moderate_drive() {
    let mut cfg = weak_config(3, 1.0);
    cfg.fock_cutoff = 7;
    cfg.pulse = cfg.pulse.with_amplitude(0.5);
    let out = evolve_exact(&cfg).unwrap();
    let cum = integrate(&cfg.model(), &cfg.pulse, &cfg.solver).unwrap();
    let mf = integrate(&cfg.model(), &cfg.pulse, &SolverConfig { closure: Closure::MeanField, ..cfg.solver }).unwrap();
    let e_cum = compare_cumulant(&out, &cum, Observable::Energy).unwrap();
    let e_mf = compare_cumulant(&out, &mf, Observable::Energy).unwrap();
    assert!(e_cum.peak_rel_error < e_mf.peak_rel_error, "{e_cum:?} vs {e_mf:?}");
}
