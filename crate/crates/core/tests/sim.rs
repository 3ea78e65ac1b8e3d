use ktl::gaussian::{calibrate, GaussianEquilibrium, GaussianInputs};
use ktl::sim::{simulate, BridgeValue, GaussianModel, SimConfig, SimMode};

fn bivariate(alpha: f64) -> GaussianEquilibrium {
    calibrate(&GaussianInputs {
        m_hat: vec![1.0, 2.0],
        s_hat: vec![vec![1.0, 0.4], vec![0.4, 2.0]],
        sigma: vec![vec![1.0, -0.3], vec![-0.3, 0.5]],
        alpha,
        beta: vec![0.5, -0.5],
        horizon: 1.0,
    })
    .unwrap()
}

fn cfg(mode: SimMode, n_paths: usize, seed: u64) -> SimConfig {
    SimConfig {
        n_paths,
        dt: 0.02,
        seed,
        mode,
        ..SimConfig::default()
    }
}

#[test]
fn same_seed_same_paths_for_any_thread_count() {
    let eq = bivariate(0.2);
    let model = GaussianModel::new(&eq).unwrap();
    let c = cfg(SimMode::Physical, 64, 11);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&model, &[0.5, -0.5], &c).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.paths, b.paths);
    let other = simulate(&model, &[0.5, -0.5], &cfg(SimMode::Physical, 64, 12)).unwrap();
    assert_ne!(a.paths[0].y, other.paths[0].y);
}

#[test]
fn risk_neutral_prices_are_martingales() {
    let eq = bivariate(0.2);
    let model = GaussianModel::new(&eq).unwrap();
    let s = simulate(&model, &[0.5, -0.5], &cfg(SimMode::RiskNeutral, 20_000, 1)).unwrap().summary();
    for c in 0..2 {
        assert!(s.mean_p_end[c].z(eq.m()[c]) < 4.0, "{:?}", s.mean_p_end);
        assert!((s.mean_p_start[c] - eq.m()[c]).abs() < 1e-12);
        // Quadratic variation of P over [0, T] is diag(S).
        assert!((s.mean_price_qv[c].mean - eq.s_matrix()[(c, c)]).abs() < 0.01 * eq.s_matrix()[(c, c)]);
    }
    let sigma = eq.sigma();
    for (i, row) in s.cov_y_end.iter().enumerate() {
        for (j, x) in row.iter().enumerate() {
            assert!((x - sigma[(i, j)]).abs() < 0.05, "{:?}", s.cov_y_end);
        }
    }
}

#[test]
fn bridge_paths_end_at_the_target_and_earn_the_conjugate() {
    let eq = bivariate(0.0);
    let model = GaussianModel::new(&eq).unwrap();
    let v = vec![1.5, 1.0];
    let mut c = cfg(SimMode::Bridge, 20_000, 2);
    c.bridge_value = Some(BridgeValue::Fixed(v.clone()));
    let batch = simulate(&model, &[0.0, 0.0], &c).unwrap();
    let s = batch.summary();
    assert!(s.max_terminal_gap.unwrap() < 1e-12);
    assert!(s.max_accounting_gap.unwrap() < 1e-9);
    for p in &batch.paths {
        assert!((p.p_end(2)[0] - v[0]).abs() < 1e-9 && (p.p_end(2)[1] - v[1]).abs() < 1e-9);
    }
    let profit = s.informed_profit.unwrap();
    assert!(profit.z(eq.conjugate(&v)) < 4.0, "{profit:?} vs {}", eq.conjugate(&v));
}

#[test]
fn physical_terminal_prices_have_the_physical_law() {
    let eq = calibrate(&GaussianInputs::univariate(0.5, 2.0, 1.0, 0.2, 1.0, 1.0)).unwrap();
    let model = GaussianModel::new(&eq).unwrap();
    let s = simulate(&model, &[1.0], &cfg(SimMode::Physical, 20_000, 3)).unwrap().summary();
    assert!(s.mean_p_end[0].z(0.5) < 4.0, "{:?}", s.mean_p_end);
    assert!((s.cov_p_end[0][0] - 2.0).abs() < 0.1, "{:?}", s.cov_p_end);
}

#[test]
fn risk_neutral_dealer_breaks_even() {
    let eq = calibrate(&GaussianInputs::univariate(0.0, 1.0, 1.0, 0.0, 0.0, 1.0)).unwrap();
    let model = GaussianModel::new(&eq).unwrap();
    let mut c = cfg(SimMode::Bridge, 20_000, 4);
    c.bridge_value = Some(BridgeValue::Physical);
    let s = simulate(&model, &[0.0], &c).unwrap().summary();
    assert!(s.dealer_wealth.z(0.0) < 4.0, "{:?}", s.dealer_wealth);
    // Informed gains and noise losses both average one.
    assert!(s.informed_profit.unwrap().z(1.0) < 4.0);
    assert!((s.bracket.mean - 1.0).abs() < 1e-12);
}
