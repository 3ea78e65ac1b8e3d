use ktl::gaussian::{calibrate, GaussianInputs};
use ktl::linalg::{matrix_from_rows, min_eigenvalue, Matrix};
use proptest::prelude::*;

/// Positive root of Tσ²λ² − αTσ²ŝλ − ŝ = 0.
fn scalar_lambda(s_hat: f64, sigma2: f64, alpha: f64, horizon: f64) -> f64 {
    let a = horizon * sigma2;
    (alpha * a * s_hat + (alpha * alpha * a * a * s_hat * s_hat + 4.0 * a * s_hat).sqrt()) / (2.0 * a)
}

#[test]
fn unit_inputs_give_frozen_lambda() {
    let eq = calibrate(&GaussianInputs::univariate(0.0, 1.0, 1.0, 0.2, 0.0, 1.0)).unwrap();
    let lam = eq.lambda_matrix()[(0, 0)];
    assert!((lam - scalar_lambda(1.0, 1.0, 0.2, 1.0)).abs() < 1e-12);
    assert!((lam - 1.104_987_562_112_089).abs() < 1e-12);
    assert!((eq.a_matrix(0.0).unwrap()[(0, 0)] - 0.180_997_512_422_418).abs() < 1e-12);
    assert!((eq.a_matrix(1.0).unwrap()[(0, 0)] - 0.220_997_512_422_418).abs() < 1e-12);
}

#[test]
fn initial_drift_is_minus_alpha_lambda_over_one_plus_alpha_lambda() {
    let eq = calibrate(&GaussianInputs::univariate(0.0, 1.0, 1.0, 0.2, 1.0, 1.0)).unwrap();
    let lam = scalar_lambda(1.0, 1.0, 0.2, 1.0);
    let drift = eq.physical_drift(0.0, &[2.0]).unwrap()[0];
    assert!((drift + 0.2 * lam / (1.0 + 0.2 * lam)).abs() < 1e-12);
    assert!((drift + 0.180_998).abs() < 1e-6);
    // At y = β there is nothing to revert.
    assert_eq!(eq.physical_drift(0.5, &[1.0]).unwrap()[0], 0.0);
}

#[test]
fn risk_neutral_lambda_is_the_volatility_ratio() {
    let eq = calibrate(&GaussianInputs::univariate(3.0, 2.25, 0.49, 0.0, 0.0, 2.0)).unwrap();
    assert!((eq.lambda_matrix()[(0, 0)] - 1.5 / (0.7 * 2f64.sqrt())).abs() < 1e-12);
    assert!((eq.s_matrix()[(0, 0)] - 2.25).abs() < 1e-12);
}

#[test]
fn unit_risk_neutral_profits_are_one() {
    let eq = calibrate(&GaussianInputs::univariate(0.0, 1.0, 1.0, 0.0, 0.0, 1.0)).unwrap();
    let p = eq.profits(None);
    assert!((p.informed_unconditional - 1.0).abs() < 1e-12);
    assert!((p.noise_loss - 1.0).abs() < 1e-12);
    assert!(p.mm_expected_wealth.abs() < 1e-12);
}

#[test]
fn time_outside_the_horizon_is_rejected() {
    let eq = calibrate(&GaussianInputs::univariate(0.0, 1.0, 1.0, 0.2, 0.0, 1.0)).unwrap();
    assert!(eq.a_matrix(1.5).is_err());
    assert!(eq.physical_drift(-0.1, &[0.0]).is_err());
}

fn spd2() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (0.2f64..3.0, 0.2f64..3.0, -0.9f64..0.9).prop_map(|(a, b, r)| {
        let c = r * (a * b).sqrt();
        vec![vec![a, c], vec![c, b]]
    })
}

fn inputs() -> impl Strategy<Value = GaussianInputs> {
    (spd2(), spd2(), 0.0f64..0.5, -1.0f64..1.0, 0.5f64..2.0).prop_map(|(s_hat, sigma, alpha, b, horizon)| GaussianInputs {
        m_hat: vec![1.0, -0.5],
        s_hat,
        sigma,
        alpha,
        beta: vec![b, 0.5 * b],
        horizon,
    })
}

fn asym(a: &Matrix) -> f64 {
    (a - a.transpose()).amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lambda_solves_the_covariance_identity(inp in inputs()) {
        let eq = calibrate(&inp).unwrap();
        let lam = eq.lambda_matrix();
        prop_assert!(eq.identity_error() < 1e-10);
        prop_assert!(asym(lam) < 1e-10 * lam.amax());
        prop_assert!(min_eigenvalue(lam) > 0.0);
        let s_hat = matrix_from_rows(&inp.s_hat).unwrap();
        // Risk-neutral covariance dominates the physical one.
        prop_assert!(min_eigenvalue(&(eq.s_matrix() - &s_hat)) > -1e-10 * s_hat.amax());
        if inp.alpha == 0.0 {
            prop_assert!((eq.s_matrix() - &s_hat).amax() < 1e-10);
        }
    }

    #[test]
    fn conjugate_pairs_satisfy_fenchel_young(inp in inputs(), v in prop::collection::vec(-3.0f64..3.0, 2), y in prop::collection::vec(-3.0f64..3.0, 2)) {
        let eq = calibrate(&inp).unwrap();
        let t = inp.horizon;
        let vy = v[0] * y[0] + v[1] * y[1];
        prop_assert!(eq.gamma(t, &y) + eq.conjugate(&v) >= vy - 1e-9);
        let z = eq.bridge_target(&v);
        let vz = v[0] * z[0] + v[1] * z[1];
        prop_assert!((eq.gamma(t, z.as_slice()) + eq.conjugate(&v) - vz).abs() < 1e-9 * (1.0 + vz.abs()));
        let back = eq.price(z.as_slice());
        prop_assert!((back[0] - v[0]).abs() < 1e-9 && (back[1] - v[1]).abs() < 1e-9);
    }

    #[test]
    fn price_of_risk_vanishes_without_risk_aversion(inp in inputs(), y in prop::collection::vec(-3.0f64..3.0, 2)) {
        let mut inp = inp;
        inp.alpha = 0.0;
        let eq = calibrate(&inp).unwrap();
        prop_assert!(eq.price_of_risk(0.3 * inp.horizon, &y).unwrap().amax() == 0.0);
        prop_assert!(eq.physical_drift(0.3 * inp.horizon, &y).unwrap().amax() == 0.0);
    }
}
