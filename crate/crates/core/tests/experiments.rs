use ktl::experiments::lognormal::{run_lognormal_example, LognormalExampleConfig};
use ktl::experiments::options::{run_options_experiment, OptionsExperimentConfig, DELTA_IV};
use ktl::experiments::output::OutputDir;
use ktl::experiments::simulation::{run_simulation, SimulationRunConfig};
use ktl::experiments::transport_run::{run_transport, TransportRunConfig};
use ktl::lognormal::bs_call;

#[test]
fn coarse_stock_and_call_run() {
    let mut cfg = OptionsExperimentConfig {
        sigmas: vec![[[4.0, -2.0], [-2.0, 4.0]]],
        value_nodes: 201,
        n_paths: 2000,
        dispersion_seeds: 0,
        kde_2d_points: 20,
        profit_bins: 10,
        ..OptionsExperimentConfig::default()
    };
    cfg.pipeline.source_nodes = 61;
    cfg.pipeline.dt = 0.05;
    let dir = tempfile::tempdir().unwrap();
    let out = OutputDir::create(dir.path(), &serde_json::to_value(&cfg).unwrap()).unwrap();
    let r = run_options_experiment(&cfg, Some(&out)).unwrap();
    let c = &r.cases[0];
    // Opening prices are the risk-neutral means of the stock and the call.
    assert!((c.initial_price[0] - 100.0).abs() < 1.0, "{:?}", c.initial_price);
    let call = bs_call(100.0, 100.0, 0.2, 1.0);
    assert!((c.initial_price[1] - call).abs() < 0.05 * call, "{:?}", c.initial_price);
    assert!((c.initial_iv - 0.2).abs() < 0.01);
    assert!(c.map_jump_ratio > 10.0);
    assert!(c.terminal_y_correlation < 0.0);
    assert!(c.univariate.coefficient(DELTA_IV).unwrap() > 0.0);
    assert!(r.table.contains("Implied vol"));
    let tag = "sigma_4_m2_4";
    for f in [
        format!("figures_data/fig1_panels_{tag}.csv"),
        format!("fields/field_{tag}_t0.5.csv"),
        format!("fields/phi_{tag}_t0.5.csv"),
        format!("paths/options_{tag}.csv"),
        "tables/table1.csv".to_string(),
    ] {
        let body = std::fs::read_to_string(dir.path().join(&f)).unwrap();
        assert!(body.starts_with("# config_hash="), "{f}");
    }
}

#[test]
fn default_transport_and_simulation_runs_pass() {
    let t = run_transport(&TransportRunConfig::default(), None).unwrap();
    assert!(t.pass, "{t:?}");
    assert!((t.w2 - 1.0).abs() < 1e-2);
    let mut s = SimulationRunConfig::default();
    s.sim.n_paths = 2000;
    let r = run_simulation(&s, None).unwrap();
    assert!(r.pass, "{:?}", r.terminal_mean_z);
}

#[test]
fn lognormal_example_premium_signs() {
    let mut cfg = LognormalExampleConfig {
        n_paths: 2000,
        ..LognormalExampleConfig::default()
    };
    cfg.pipeline.source_nodes = 201;
    let r = run_lognormal_example(&cfg, None).unwrap();
    assert!(r.closed_form.pass, "{:?}", r.closed_form);
    assert!(r.cases.iter().all(|c| c.sign_matches), "{:?}", r.cases.iter().map(|c| c.premium).collect::<Vec<_>>());
}
