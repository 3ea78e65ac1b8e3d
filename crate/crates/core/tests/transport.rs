use ktl::grid::{Axis, Grid};
use ktl::linalg::Matrix;
use ktl::potential;
use ktl::transport::{
    build_gaussian_marginal, duality_report, extract_map, solve_quadratic_ot, solve_quadratic_ot_with,
    wasserstein2, DiscreteMeasure, GridSpec, OtOptions, Solver,
};
use proptest::prelude::*;

fn opts(solver: Solver) -> OtOptions {
    OtOptions {
        solver,
        max_pivots: None,
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cheapest assignment between equally weighted point sets, by enumeration.
fn brute_force_cost(src: &[Vec<f64>], dst: &[Vec<f64>]) -> f64 {
    fn go(i: usize, used: &mut Vec<bool>, src: &[Vec<f64>], dst: &[Vec<f64>], acc: f64, best: &mut f64) {
        if i == src.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..dst.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, used, src, dst, acc + sq(&src[i], &dst[j]), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, &mut vec![false; dst.len()], src, dst, 0.0, &mut best);
    best / src.len() as f64
}

fn measure(dim: usize, pts: &[Vec<f64>]) -> DiscreteMeasure {
    let n = pts.len();
    DiscreteMeasure::new(dim, pts.concat(), vec![1.0 / n as f64; n]).unwrap()
}

#[test]
fn two_point_problem_picks_the_cheaper_matching() {
    let src = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
    let dst = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
    // Straight matching costs 1 per point, the crossed one costs 2.
    assert_eq!(brute_force_cost(&src, &dst), 1.0);
    let c = solve_quadratic_ot(&measure(2, &src), &measure(2, &dst)).unwrap();
    assert!((c.cost() - 1.0).abs() < 1e-12);
    assert!(c.marginal_residual() < 1e-12);
}

#[test]
fn gaussian_to_gaussian_map_is_linear() {
    let spec = GridSpec::uniform(1, 301, 4.0);
    let src = build_gaussian_marginal(&[0.0], &Matrix::from_element(1, 1, 1.0), &spec).unwrap();
    let dst = build_gaussian_marginal(&[0.5], &Matrix::from_element(1, 1, 4.0), &spec).unwrap();
    let map = extract_map(&solve_quadratic_ot(&src, &dst).unwrap());
    for i in 60..240 {
        let y = map.grid_point(i)[0];
        assert!((map.image(i)[0] - (0.5 + 2.0 * y)).abs() < 0.03, "y {y}");
    }
    // W2² between the two normals is (0.5)² + (2 − 1)².
    let w2 = wasserstein2(&src, &dst).unwrap();
    assert!((w2 * w2 - 1.25).abs() < 1e-2, "{w2}");
}

#[test]
fn duality_closes_for_recovered_gaussian_potential() {
    let spec = GridSpec::uniform(1, 201, 4.0);
    let src = build_gaussian_marginal(&[0.0], &Matrix::from_element(1, 1, 1.0), &spec).unwrap();
    let dst = build_gaussian_marginal(&[0.0], &Matrix::from_element(1, 1, 4.0), &spec).unwrap();
    let c = solve_quadratic_ot(&src, &dst).unwrap();
    let pot = potential::recover_potential(&extract_map(&c), &src).unwrap();
    let d = duality_report(&c, &pot);
    assert!(d.lp_gap.abs() < 1e-9 * d.scale);
    assert!(d.gap.abs() < 1e-2 * d.scale, "{d:?}");
    // E[v·y] = Cov(2Z, Z) = 2.
    assert!((d.primal - 2.0).abs() < 1e-2);
}

#[test]
fn two_dimensional_grid_coupling_is_cyclically_monotone() {
    let g = Grid::new(vec![Axis::centered(0.0, 3.0, 9).unwrap(); 2]).unwrap();
    let pts = g.points();
    let w: Vec<f64> = (0..g.len())
        .map(|i| {
            let y = &pts[2 * i..2 * i + 2];
            (-0.5 * (y[0] * y[0] + y[1] * y[1])).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    let src = DiscreteMeasure::new(2, pts.clone(), w.iter().map(|x| x / s).collect()).unwrap();
    let img: Vec<f64> = pts.chunks(2).flat_map(|y| [2.0 * y[0] + y[1], y[0] + y[1]]).collect();
    let dst = DiscreteMeasure::new(2, img, src.weights().to_vec()).unwrap();
    let c = solve_quadratic_ot(&src, &dst).unwrap();
    // A symmetric positive definite linear image is already optimal.
    let expected: f64 = pts
        .chunks(2)
        .zip(src.weights())
        .map(|(y, w)| w * sq(y, &[2.0 * y[0] + y[1], y[0] + y[1]]))
        .sum();
    assert!((c.cost() - expected).abs() < 1e-9 * expected);
    assert!(extract_map(&c).monotonicity_defect(2000, 3) >= -1e-12);
}

fn points(dim: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), n)
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_matches_enumeration(src in points(2, 5), dst in points(2, 5)) {
        let c = solve_quadratic_ot_with(&measure(2, &src), &measure(2, &dst), &opts(Solver::NetworkSimplex)).unwrap();
        let best = brute_force_cost(&src, &dst);
        prop_assert!((c.cost() - best).abs() <= 1e-9 * (1.0 + best));
    }

    #[test]
    fn simplex_agrees_with_monotone_in_one_dimension(
        xs in prop::collection::vec(-4.0f64..4.0, 12),
        vs in prop::collection::vec(-4.0f64..4.0, 9),
        wx in weights(12),
        wv in weights(9),
    ) {
        let a = DiscreteMeasure::new(1, xs, wx).unwrap();
        let b = DiscreteMeasure::new(1, vs, wv).unwrap();
        let simplex = solve_quadratic_ot_with(&a, &b, &opts(Solver::NetworkSimplex)).unwrap();
        let mono = solve_quadratic_ot_with(&a, &b, &opts(Solver::Monotone)).unwrap();
        prop_assert!((simplex.cost() - mono.cost()).abs() <= 1e-9 * (1.0 + mono.cost()));
    }

    #[test]
    fn couplings_have_the_right_marginals(
        src in points(2, 7),
        dst in points(2, 6),
        wx in weights(7),
        wv in weights(6),
    ) {
        let a = DiscreteMeasure::new(2, src.concat(), wx).unwrap();
        let b = DiscreteMeasure::new(2, dst.concat(), wv).unwrap();
        let c = solve_quadratic_ot(&a, &b).unwrap();
        prop_assert!(c.marginal_residual() <= 1e-9);
        prop_assert!(c.cost() >= 0.0);
        prop_assert!(c.entries().iter().all(|e| e.2 >= -1e-15));
        prop_assert!((c.cost() - c.dual_value()).abs() <= 1e-8 * (1.0 + c.cost()));
        prop_assert!(c.max_dual_violation() <= 1e-8);
    }
}
