use ktl::stats::{binned_mean, correlation, kde_1d, kde_2d, local_maxima, mean_se, ols, silverman_bandwidth};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn ols_recovers_an_exact_linear_relation() {
    let x1: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
    let x2: Vec<f64> = (0..50).map(|i| ((i * 7) % 11) as f64).collect();
    let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 1.5 - 2.0 * a + 0.25 * b).collect();
    let ones = vec![1.0; 50];
    let r = ols(&y, &[ones, x1, x2], &["const", "x1", "x2"]).unwrap();
    assert!((r.coefficient("const").unwrap() - 1.5).abs() < 1e-10);
    assert!((r.coefficient("x1").unwrap() + 2.0).abs() < 1e-10);
    assert!((r.coefficient("x2").unwrap() - 0.25).abs() < 1e-10);
    assert!((r.r_squared - 1.0).abs() < 1e-12);
    assert!(r.standard_errors.iter().all(|s| *s < 1e-8));
    assert!(r.coefficient("x3").is_none());
}

#[test]
fn ols_rejects_collinear_columns() {
    let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let twice: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    assert!(ols(&x, &[vec![1.0; 20], x.clone(), twice], &["c", "x", "2x"]).is_err());
}

#[test]
fn ols_standard_error_matches_the_textbook_slope_formula() {
    let x = normals(400, 1);
    let e = normals(400, 2);
    let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| 0.5 + a + 0.3 * b).collect();
    let r = ols(&y, &[vec![1.0; 400], x.clone()], &["c", "x"]).unwrap();
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm) * (v - xm)).sum();
    let rss: f64 = r.residuals.iter().map(|u| u * u).sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    assert!((r.standard_errors[1] - se).abs() < 1e-12);
    assert!(r.ci95_low[1] < 1.0 && 1.0 < r.ci95_high[1]);
}

#[test]
fn kde_of_normal_samples_approximates_the_normal_density() {
    let x = normals(20_000, 3);
    let kde = kde_1d(&x, None).unwrap();
    assert!((kde.bandwidth() - silverman_bandwidth(&x)).abs() < 1e-15);
    let peak = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((kde.density(0.0) - peak).abs() < 0.02);
    let grid: Vec<f64> = (0..=800).map(|i| -8.0 + i as f64 * 0.02).collect();
    let mass: f64 = kde.evaluate(&grid).iter().sum::<f64>() * 0.02;
    assert!((mass - 1.0).abs() < 1e-6);
    assert!(kde_1d(&x[..10], None).is_err());
}

#[test]
fn bimodal_kde_has_two_peaks() {
    let x: Vec<f64> = normals(4000, 4).iter().enumerate().map(|(i, v)| v * 0.5 + if i % 2 == 0 { -3.0 } else { 3.0 }).collect();
    let kde = kde_1d(&x, Some(0.3)).unwrap();
    let grid: Vec<f64> = (0..=120).map(|i| -6.0 + i as f64 * 0.1).collect();
    let peaks = local_maxima(&kde.evaluate(&grid));
    assert_eq!(peaks.len(), 2);
    assert!(peaks.iter().all(|&i| (grid[i].abs() - 3.0).abs() < 0.3));
}

#[test]
fn kde_2d_integrates_to_one() {
    let x = normals(2000, 5);
    let y = normals(2000, 6);
    let k = kde_2d(&x, &y, 120, 100).unwrap();
    let (dx, dy) = (k.x[1] - k.x[0], k.y[1] - k.y[0]);
    let mass: f64 = k.density.iter().sum::<f64>() * dx * dy;
    assert!((mass - 1.0).abs() < 5e-3, "{mass}");
}

#[test]
fn binned_means_of_a_constant_are_constant() {
    let x = normals(500, 7);
    let y = normals(500, 8);
    let pts: Vec<(f64, f64)> = x.iter().cloned().zip(y.iter().cloned()).collect();
    let b = binned_mean(&pts, &vec![2.5; 500], 5, 4).unwrap();
    assert_eq!(b.counts.iter().sum::<usize>(), 500);
    assert!(b.means.iter().flatten().all(|m| (m - 2.5).abs() < 1e-12));
    assert_eq!(b.means.iter().filter(|m| m.is_none()).count(), b.counts.iter().filter(|c| **c == 0).count());
}

proptest! {
    #[test]
    fn correlation_is_bounded_and_scale_free(x in prop::collection::vec(-10.0f64..10.0, 5..40), a in 0.1f64..5.0, b in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v.sin() + i as f64 * 0.1).collect();
        let r = correlation(&x, &y);
        prop_assume!(r.is_finite());
        prop_assert!(r.abs() <= 1.0 + 1e-12);
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((correlation(&xs, &y) - r).abs() < 1e-9);
    }

    #[test]
    fn mean_se_of_shifted_data(x in prop::collection::vec(-10.0f64..10.0, 2..50), c in -100.0f64..100.0) {
        let (m, se) = mean_se(&x);
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let (m2, se2) = mean_se(&shifted);
        prop_assert!((m2 - m - c).abs() < 1e-9);
        prop_assert!((se2 - se).abs() < 1e-9 * (1.0 + se));
    }
}
