use std::io::Write;

use qbattery::fit::{
    build_model_bank, default_window_bounds, evaluate_bank, global_fit_refined, load_dataset, synthetic_dataset, DatasetMeta, FitGrid, FitOptions,
    Weighting,
};

const TRUTH: [f64; 3] = [10.6, 1.68, 0.0141];

fn grid() -> FitGrid {
    FitGrid {
        g_nev: vec![9.0, 10.6, 12.5],
        gamma0z_mev: vec![1.3, 1.68, 2.2],
        gamma_minus_mev: vec![0.008, 0.0141, 0.025],
    }
}

fn noiseless(opts: &FitOptions) -> Vec<qbattery::fit::ExperimentDataset> {
    let times: Vec<f64> = (0..=120).map(|i| -200.0 + 15.0 * i as f64).collect();
    [("A2", 2.5, 30.0), ("B1", 0.8, -60.0)]
        .iter()
        .map(|&(label, scale, shift)| {
            let windows = default_window_bounds(label).len() + 1;
            let meta = DatasetMeta { label: label.into(), window_sigmas: Some(vec![1e-3; windows]), ..Default::default() };
            synthetic_dataset(&meta, times.clone(), TRUTH, scale, shift, 0.0, opts, 7).unwrap()
        })
        .collect()
}

#[test]
fn noiseless_data_is_recovered_under_both_weightings() {
    for weighting in [Weighting::ScaleData, Weighting::ScaleModel] {
        let mut opts = FitOptions::default();
        opts.inner.weighting = weighting;
        let data = noiseless(&opts);
        let bank = build_model_bank(&data, &grid(), &opts).unwrap();
        let fit = evaluate_bank(&bank, &data, &opts).unwrap();
        assert_eq!(fit.best, TRUTH, "{weighting}");
        assert!(fit.chi2_reduced_min < 1e-6, "{weighting}: {}", fit.chi2_reduced_min);
        let (_, a2) = &fit.per_dataset[0];
        assert!((a2.scale - 2.5).abs() < 1e-3 && (a2.shift_fs - 30.0).abs() < 0.5, "{weighting}: {a2:?}");
        let (_, b1) = &fit.per_dataset[1];
        assert!((b1.scale - 0.8).abs() < 1e-3 && (b1.shift_fs + 60.0).abs() < 0.5, "{weighting}: {b1:?}");
    }
}

#[test]
fn refinement_keeps_the_truth_and_tightens_the_grid() {
    let opts = FitOptions { inner: qbattery::fit::InnerFitOptions { weighting: Weighting::ScaleModel, ..Default::default() }, ..Default::default() };
    let data = noiseless(&opts);
    let (coarse, fine) = global_fit_refined(&data, &grid(), &opts, 2).unwrap();
    assert_eq!(coarse.best, TRUTH);
    assert!(fine.grid.len() > coarse.grid.len());
    for (best, truth) in fine.best.iter().zip(TRUTH) {
        assert!((best - truth).abs() <= 1e-9 * truth);
    }
    assert!(fine.chi2_reduced_min <= coarse.chi2_reduced_min + 1e-12);
}

#[test]
fn csv_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a2.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "# pump-probe, A2").unwrap();
    writeln!(f, "t_fs, dR_over_R").unwrap();
    for i in 0..50 {
        writeln!(f, "{}, {}", -100 + 10 * i, 1e-3 * (i as f64).sin()).unwrap();
    }
    drop(f);

    let sigmas: Vec<f64> = (1..=default_window_bounds("A2").len() + 1).map(|i| 1e-4 * i as f64).collect();
    let meta = DatasetMeta { label: "A2".into(), window_sigmas: Some(sigmas.clone()), ..Default::default() };
    let ds = load_dataset(&path, &meta).unwrap();
    assert_eq!(ds.len(), 50);
    assert_eq!(ds.times_fs[0], -100.0);
    assert!(ds.n_dye > 0.0 && ds.r > 0.0);
    let sig = ds.sigmas().unwrap();
    assert!(sig.iter().all(|s| sigmas.contains(s)));

    std::fs::write(&path, "t_fs,dR_over_R\n0,1\n10,oops\n").unwrap();
    let err = load_dataset(&path, &meta).unwrap_err().to_string();
    assert!(err.contains("line 3") || err.contains("oops"), "{err}");

    let unknown = DatasetMeta { label: "Z9".into(), ..Default::default() };
    assert!(load_dataset(&path, &unknown).is_err());
}
