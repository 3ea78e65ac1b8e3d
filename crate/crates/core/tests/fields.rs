use ktl::gaussian::{calibrate, GaussianEquilibrium, GaussianInputs};
use ktl::heat::{bidask_rate, build_kernel, heat_residual, propagate, SpaceTimeField};
use ktl::linalg::Matrix;
use ktl::potential::{conjugate, expected_informed_profit, recover_potential, BrenierPotential};
use ktl::risk::{pde_residual, risk_premium, solve_phi};
use ktl::transport::{build_gaussian_marginal, DiscreteMeasure, GridSpec, TransportMap};
use proptest::prelude::*;

fn gaussian_source(cov: &Matrix, nodes: usize, half_width: f64) -> DiscreteMeasure {
    let d = cov.nrows();
    build_gaussian_marginal(&vec![0.0; d], cov, &GridSpec::uniform(d, nodes, half_width)).unwrap()
}

/// Potential of the affine map y ↦ m + Ly on the source grid.
fn affine_potential(src: &DiscreteMeasure, m: &[f64], l: &Matrix) -> BrenierPotential {
    let d = m.len();
    let images: Vec<f64> = src
        .points()
        .chunks(d)
        .flat_map(|y| {
            let y = nalgebra::DVector::from_column_slice(y);
            (l * y).iter().zip(m).map(|(a, b)| a + b).collect::<Vec<_>>()
        })
        .collect();
    let map = TransportMap::on_grid(src.grid().unwrap().clone(), images).unwrap();
    recover_potential(&map, src).unwrap()
}

fn quadratic(y: &[f64], m: &[f64], l: &Matrix) -> f64 {
    let v = nalgebra::DVector::from_column_slice(y);
    0.5 * v.dot(&(l * &v)) + m.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
}

#[test]
fn affine_map_integrates_to_a_normalized_quadratic() {
    let cov = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
    let src = gaussian_source(&cov, 41, 4.0);
    let l = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let m = [1.0, -2.0];
    let pot = affine_potential(&src, &m, &l);
    let raw: Vec<f64> = src.points().chunks(2).map(|y| quadratic(y, &m, &l)).collect();
    let c = -src.expect(&raw);
    let err = raw
        .iter()
        .zip(pot.values())
        .map(|(q, g)| (q + c - g).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-7, "max error {err}");
    assert!(src.expect(pot.values()).abs() < 1e-10);
    assert!(pot.convexity_defect() <= 1e-12);
}

#[test]
fn rotation_is_not_a_gradient() {
    let src = gaussian_source(&Matrix::identity(2, 2), 21, 3.0);
    let images: Vec<f64> = src.points().chunks(2).flat_map(|y| [-y[1], y[0]]).collect();
    let map = TransportMap::on_grid(src.grid().unwrap().clone(), images).unwrap();
    assert!(recover_potential(&map, &src).is_err());
}

#[test]
fn unit_informed_profit_from_the_discrete_conjugate() {
    // σ = Ŝ = T = 1 and α = 0: Γ(y) = y²/2 − 1/2, Γ*(v) = v²/2 + 1/2.
    let one = Matrix::identity(1, 1);
    let src = gaussian_source(&one, 601, 6.0);
    let pot = affine_potential(&src, &[0.0], &one);
    let f = gaussian_source(&one, 201, 4.0);
    let conj = conjugate(&pot, f.points());
    assert!((expected_informed_profit(&conj, &f) - 1.0).abs() < 1e-3);
    assert_eq!(conj.boundary_fraction(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn discrete_conjugate_satisfies_fenchel_young(
        a in 0.5f64..3.0,
        b in 0.5f64..3.0,
        r in -0.8f64..0.8,
        v in prop::collection::vec(-4.0f64..4.0, 2),
        node in 0usize..441,
    ) {
        let src = gaussian_source(&Matrix::identity(2, 2), 21, 3.0);
        let off = r * (a * b).sqrt();
        let l = Matrix::from_row_slice(2, 2, &[a, off, off, b]);
        let pot = affine_potential(&src, &[0.3, -0.2], &l);
        let y = src.point(node);
        let table = conjugate(&pot, &v);
        let vy = v[0] * y[0] + v[1] * y[1];
        prop_assert!(pot.values()[node] + table.values()[0] >= vy - 1e-9);
        // Equality where v is the gradient at the node.
        let g = pot.gradient_at_node(node).to_vec();
        let at = conjugate(&pot, &g);
        let gy = g[0] * y[0] + g[1] * y[1];
        prop_assert!((pot.values()[node] + at.values()[0] - gy).abs() < 1e-8);
    }
}

struct Pipeline {
    eq: GaussianEquilibrium,
    field: SpaceTimeField,
    pot: BrenierPotential,
    sigma: Matrix,
}

/// Quadratic potential of the univariate normal equilibrium, propagated
/// on a grid with step 0.05 and Δt = 0.01.
fn univariate(alpha: f64, beta: f64) -> Pipeline {
    let eq = calibrate(&GaussianInputs::univariate(0.0, 1.0, 1.0, alpha, beta, 1.0)).unwrap();
    let sigma = Matrix::identity(1, 1);
    let src = gaussian_source(&sigma, 241, 6.0);
    let pot = affine_potential(&src, eq.m().as_slice(), eq.lambda_matrix());
    let kernel = build_kernel(&sigma, 0.01, src.grid().unwrap()).unwrap();
    let field = propagate(&pot, &kernel, 1.0).unwrap();
    Pipeline { eq, field, pot, sigma }
}

#[test]
fn quadratic_potential_shifts_by_half_the_bidask_accrual() {
    let p = univariate(0.0, 0.0);
    let lam = p.eq.lambda_matrix()[(0, 0)];
    let grid = p.field.grid().clone();
    let interior = grid.interior(0.6);
    for t in [0.0, 0.25, 0.5, 0.75] {
        let k = p.field.slice_index(t);
        let shift = 0.5 * lam * (1.0 - t);
        for &i in &interior {
            let y = grid.coords(i)[0];
            assert!((p.field.gamma(k)[i] - p.pot.values()[i] - shift).abs() < 1e-6, "t {t} y {y}");
            assert!((p.field.price(k)[i] - lam * y).abs() < 1e-6);
            assert!((p.field.lambda(k)[i] - lam).abs() < 1e-6);
        }
        let (rate, clamped) = bidask_rate(&p.field, &p.sigma, t, &[0.5]);
        assert!(!clamped && (rate - lam).abs() < 1e-6);
    }
    // H is affine, so both terms of the heat equation vanish.
    let r = heat_residual(&p.field, &p.sigma);
    assert!(r.max_abs.iter().all(|&x| x < 1e-9), "{r:?}");
}

#[test]
fn price_of_risk_matches_the_closed_form() {
    let p = univariate(0.2, 1.0);
    let phi = solve_phi(&p.field, &p.pot, &build_kernel(&p.sigma, 0.01, p.field.grid()).unwrap(), 0.2, &[1.0]).unwrap();
    let grid = p.field.grid().clone();
    for t in [0.0, 0.5, 0.9] {
        let k = phi.slice_index(t);
        for y in [-2.0, -1.0, 0.0, 2.0, 3.0] {
            let exact = p.eq.price_of_risk(t, &[y]).unwrap()[0];
            let i = grid.nearest(&[y]).0;
            let got = phi.grad(k)[i];
            assert!((got - exact).abs() <= 0.01 * exact.abs() + 1e-6, "t {t} y {y}: {got} vs {exact}");
        }
    }
    assert!(pde_residual(&phi, &p.field, &p.sigma).max_relative < 5e-3);
    // The premium points from the order imbalance back towards β.
    let (below, _) = risk_premium(&phi, &p.field, &p.sigma, 0.5, &[-1.0]);
    let (above, _) = risk_premium(&phi, &p.field, &p.sigma, 0.5, &[3.0]);
    assert!(below[0] > 0.0 && above[0] < 0.0);
}
