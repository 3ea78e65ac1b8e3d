use ktl::lognormal::{bs_call, bs_put, implied_vol, norm_pdf, LognormalSpec};
use proptest::prelude::*;

/// ∫ f(x) φ(x) dx over [−10, 10] by composite Simpson.
fn gauss_expect(f: impl Fn(f64) -> f64) -> f64 {
    let n = 20_000;
    let h = 20.0 / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = -10.0 + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * f(x) * norm_pdf(x);
    }
    acc * h / 3.0
}

fn call_by_quadrature(s: f64, k: f64, sigma: f64, tau: f64) -> f64 {
    let v = sigma * tau.sqrt();
    gauss_expect(|x| (s * (v * x - 0.5 * v * v).exp() - k).max(0.0))
}

#[test]
fn at_the_money_call_matches_quadrature() {
    let q = call_by_quadrature(100.0, 100.0, 0.2, 1.0);
    assert!((q - 7.9656).abs() < 1e-4);
    assert!((bs_call(100.0, 100.0, 0.2, 1.0) - q).abs() < 1e-6);
}

#[test]
fn plain_lognormal_opens_at_its_mean() {
    let spec = LognormalSpec::from_moments(100.0, 20.0, 1.0, 1.0, None).unwrap();
    let f = spec.fields(0.0, 0.0);
    assert!((f.price - 100.0).abs() < 1e-9);
    assert!(f.gamma.abs() < 1e-9);
}

#[test]
fn winsorized_terminal_price_is_capped_continuously() {
    let spec = LognormalSpec::from_moments(100.0, 20.0, 1.0, 1.0, Some(120.0)).unwrap();
    let ys = spec.y_star().unwrap();
    let below = spec.fields(1.0, ys - 1e-9).price;
    let above = spec.fields(1.0, ys + 1e-9).price;
    assert!((below - 120.0).abs() < 1e-6 && (above - 120.0).abs() < 1e-9);
    assert_eq!(spec.fields(1.0, ys + 1.0).lambda, 0.0);
    assert!((spec.map(ys + 2.0) - 120.0).abs() < 1e-9);
}

#[test]
fn prices_are_heat_averages_of_the_terminal_map() {
    for cap in [None, Some(115.0)] {
        let spec = LognormalSpec::from_moments(100.0, 15.0, 1.3, 1.0, cap).unwrap();
        let sd = spec.noise_sd();
        for t in [0.0f64, 0.4, 0.8] {
            let s = sd * (1.0 - t).sqrt();
            for y in [-1.5, 0.0, 0.7, 2.0] {
                let f = spec.fields(t, y);
                let price = gauss_expect(|x| spec.map(y + s * x));
                let gamma = gauss_expect(|x| spec.fields(1.0, y + s * x).gamma_terminal);
                assert!((f.price - price).abs() < 1e-6 * price, "{cap:?} t {t} y {y}");
                assert!((f.gamma - gamma).abs() < 1e-6 * (1.0 + gamma.abs()), "{cap:?} t {t} y {y}");
                let h = 1e-4;
                let slope = (spec.fields(t, y + h).price - spec.fields(t, y - h).price) / (2.0 * h);
                assert!((f.lambda - slope).abs() < 1e-5 * (1.0 + slope.abs()));
            }
        }
    }
}

#[test]
fn implied_vol_rejects_prices_outside_the_no_arbitrage_band() {
    assert!(implied_vol(5.0, 110.0, 100.0, 1.0).is_err());
    assert!(implied_vol(120.0, 110.0, 100.0, 1.0).is_err());
    assert!(implied_vol(1.0, 100.0, 100.0, 0.0).is_err());
}

proptest! {
    #[test]
    fn implied_vol_inverts_the_call_price(s in 60.0f64..150.0, k in 80.0f64..120.0, vol in 0.05f64..1.5, tau in 0.1f64..2.0) {
        let price = bs_call(s, k, vol, tau);
        // Deep in or out of the money the price carries no information about σ.
        prop_assume!(price - (s - k).max(0.0) > 1e-6 * s);
        let back = implied_vol(price, s, k, tau).unwrap();
        prop_assert!((back - vol).abs() < 1e-6, "{back} vs {vol}");
    }

    #[test]
    fn put_call_parity_holds(s in 10.0f64..200.0, k in 10.0f64..200.0, vol in 0.01f64..2.0, tau in 0.0f64..3.0) {
        prop_assert!((bs_call(s, k, vol, tau) - bs_put(s, k, vol, tau) - (s - k)).abs() < 1e-9 * (s + k));
        prop_assert!(bs_call(s, k, vol, tau) >= (s - k).max(0.0) - 1e-9);
    }
}
