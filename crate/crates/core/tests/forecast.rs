mod common;

use qplan::forecast::{
    desp_forecast, fit_clusters, median_relative_error, predict_eval, DespParams, ForecastModel, ScalingSetup,
    GAMMA_MAX_TENTHS, GAMMA_MIN_TENTHS,
};
use qplan::load::LoadConfig;
use qplan::mapping::GoaCostModel;
use qplan::synth::{micro_switch, synth_smooth_costs, SmoothConfig};

#[test]
fn hand_worked_forecast() {
    let f = desp_forecast(&[10.0, 12.0, 11.0], DespParams { alpha: 0.5, beta: 0.5 }).unwrap();
    assert_eq!(f, 13.75);
}

#[test]
fn linear_series_are_exact_for_any_smoothing() {
    for (alpha, beta) in [(0.1, 0.9), (0.5, 0.3), (0.9, 0.1), (0.3, 0.3)] {
        let series: Vec<f64> = (0..12).map(|t| 7.0 + 3.0 * t as f64).collect();
        let f = desp_forecast(&series, DespParams { alpha, beta }).unwrap();
        assert!((f - 43.0).abs() < 1e-9, "{alpha}/{beta}: {f}");
    }
}

#[test]
fn smooth_workload_error_is_low() {
    for seed in 1..=5 {
        let h = synth_smooth_costs(&SmoothConfig { seed, ..SmoothConfig::default() }).unwrap();
        let rows = predict_eval(&h, 10, DespParams::default()).unwrap();
        let e = median_relative_error(&rows).unwrap();
        assert!(e < 0.10, "seed {seed}: {e}");
    }
}

#[test]
fn fitted_model_on_micro_history() {
    let h = common::micro_history(4);
    let train = &h[..10];
    let shapes = qplan::cost::shapes_of(train);
    let plan = qplan::harness::finest_snr_plan(&shapes, &micro_switch());
    let chains = plan.chains(&shapes).unwrap();
    let setup = ScalingSetup {
        chains: &chains,
        registers: &plan.registers,
        load: LoadConfig::default(),
        model: GoaCostModel::Handoff,
        enhanced: true,
    };
    let m = ForecastModel::fit(train, DespParams::default(), 10, 1, &setup).unwrap();
    assert_eq!(m, ForecastModel::fit(train, DespParams::default(), 10, 1, &setup).unwrap());
    let n_keys = train[0].len();
    assert_eq!(m.clusters.iter().map(|c| c.members.len()).sum::<usize>(), n_keys);
    assert!(m
        .clusters
        .iter()
        .all(|c| (GAMMA_MIN_TENTHS..=GAMMA_MAX_TENTHS).contains(&c.gamma_tenths)));
    let p = m.predict(train).unwrap();
    assert!(p.entries.values().all(|e| e.n_out <= e.n_in));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    assert_eq!(ForecastModel::load(&path).unwrap(), m);
}

#[test]
fn clusters_need_two_windows() {
    let h = common::micro_history(1);
    assert!(fit_clusters(&h[..1], 10, 1).is_err());
    assert!(fit_clusters(&h[..2], 10, 1).is_ok());
}
