//! Risk-averse market makers: the log-SDF field φ, prices of risk ∇φ and the
//! physical drift and risk premia they imply.

use std::io::Write;

use crate::error::{Error, Result};
use crate::gaussian::GaussianEquilibrium;
use crate::grid::Grid;
use crate::heat::{self, ResidualSummary, SpaceTimeField, TransitionKernel};
use crate::linalg::Matrix;
use crate::potential::BrenierPotential;

/// φ(t,·) and ∇φ(t,·) on the field's grid at every time slice.
#[derive(Clone, Debug)]
pub struct PhiField {
    grid: Grid,
    sigma: Matrix,
    dt: f64,
    times: Vec<f64>,
    alpha: f64,
    beta: Vec<f64>,
    phi: Vec<Vec<f64>>,
    grad: Vec<Vec<f64>>,
}

fn gradient(grid: &Grid, f: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    let n = grid.len();
    let mut out = vec![0.0; n * d];
    let mut der = vec![0.0; n];
    for k in 0..d {
        heat::derivative(grid, f, k, &mut der);
        for i in 0..n {
            out[i * d + k] = der[i];
        }
    }
    out
}

/// Terminal condition φ(T,z) = −α(z − β)·∇Γ(z) + αΓ(z).
pub fn terminal_phi(potential: &BrenierPotential, alpha: f64, beta: &[f64]) -> Vec<f64> {
    let grid = potential.grid();
    let d = grid.dim();
    let mut z = vec![0.0; d];
    (0..grid.len())
        .map(|i| {
            grid.coords_into(i, &mut z);
            let g = potential.gradient_at_node(i);
            let dot: f64 = (0..d).map(|k| (z[k] - beta[k]) * g[k]).sum();
            alpha * (potential.values()[i] - dot)
        })
        .collect()
}

/// Backward recursion e^{φ(t,y)} = (1 + αΔt tr(ΣΛ(t,y))) E[e^{φ(t+Δt, y+Z_Δt)}],
/// carried out on φ itself so that e^φ never has to be formed.
pub fn solve_phi(
    field: &SpaceTimeField,
    potential: &BrenierPotential,
    kernel: &TransitionKernel,
    alpha: f64,
    beta: &[f64],
) -> Result<PhiField> {
    let grid = field.grid().clone();
    let d = grid.dim();
    if beta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: beta.len(),
        });
    }
    if kernel.grid() != &grid || potential.grid() != &grid {
        return Err(Error::invalid("field, potential and kernel live on different grids"));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("risk aversion must be ≥ 0, got {alpha}")));
    }
    let steps = field.steps();
    let dt = field.dt();
    let n = grid.len();
    let mut phi = vec![Vec::new(); steps + 1];
    phi[steps] = terminal_phi(potential, alpha, beta);
    if alpha > 0.0 {
        let mut expect = vec![0.0; n];
        for k in (0..steps).rev() {
            kernel.apply_log(&phi[k + 1], &mut expect);
            let rate = field.bidask_slice(k);
            let mut cur = vec![0.0; n];
            for i in 0..n {
                let factor = 1.0 + alpha * dt * rate[i];
                if !(factor > 0.0) {
                    return Err(Error::NonFinite(format!(
                        "1 + αΔt tr(ΣΛ) = {factor} at slice {k}, node {i}"
                    )));
                }
                cur[i] = factor.ln() + expect[i];
            }
            if cur.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("φ at slice {k}")));
            }
            phi[k] = cur;
        }
    } else {
        for slice in phi.iter_mut().take(steps) {
            *slice = vec![0.0; n];
        }
    }
    let grad = phi.iter().map(|p| gradient(&grid, p)).collect();
    Ok(PhiField {
        sigma: field.sigma().clone(),
        dt,
        times: field.times().to_vec(),
        grid,
        alpha,
        beta: beta.to_vec(),
        phi,
        grad,
    })
}

impl PhiField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn slice_index(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.steps())
    }

    pub fn phi(&self, k: usize) -> &[f64] {
        &self.phi[k]
    }

    /// ∇φ at slice k, `dim` values per node.
    pub fn grad(&self, k: usize) -> &[f64] {
        &self.grad[k]
    }

    pub fn phi_at(&self, k: usize, y: &[f64]) -> (f64, bool) {
        self.grid.interpolate(&self.phi[k], y)
    }

    pub fn grad_at(&self, k: usize, y: &[f64], out: &mut [f64]) -> bool {
        self.grid.interpolate_into(&self.grad[k], self.dim(), y, out)
    }

    /// Physical drift Σ∇φ at the node nearest to y; flags clamping.
    pub fn drift_nearest(&self, k: usize, y: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim();
        let (node, clamped) = self.grid.nearest(y);
        let g = &self.grad[k][node * d..(node + 1) * d];
        for a in 0..d {
            out[a] = (0..d).map(|b| self.sigma[(a, b)] * g[b]).sum();
        }
        clamped
    }

    /// Physical drift Σ∇φ by multilinear interpolation of ∇φ.
    pub fn drift_interpolated(&self, k: usize, y: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim();
        let mut g = [0.0; crate::grid::MAX_DIM];
        let clamped = self.grad_at(k, y, &mut g[..d]);
        for a in 0..d {
            out[a] = (0..d).map(|b| self.sigma[(a, b)] * g[b]).sum();
        }
        clamped
    }

    /// One row per node for slice k: coordinates, φ, ∇φ, Σ∇φ.
    pub fn write_slice_csv<W: Write>(&self, k: usize, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|c| format!("y{c}")).collect();
        header.push("phi".into());
        header.extend((0..d).map(|c| format!("grad_phi{c}")));
        header.extend((0..d).map(|c| format!("drift{c}")));
        writeln!(out, "{}", header.join(","))?;
        let mut y = vec![0.0; d];
        for i in 0..self.grid.len() {
            self.grid.coords_into(i, &mut y);
            let g = &self.grad[k][i * d..(i + 1) * d];
            let mut row: Vec<String> = y.iter().map(|x| x.to_string()).collect();
            row.push(self.phi[k][i].to_string());
            row.extend(g.iter().map(|x| x.to_string()));
            for a in 0..d {
                let s: f64 = (0..d).map(|b| self.sigma[(a, b)] * g[b]).sum();
                row.push(s.to_string());
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// φ_t + ½tr(Σ∇²φ) + ½∇φ'Σ∇φ + αtr(ΣΛ) at slice k, with the per-node sum of
/// the magnitudes of the four terms.
pub fn pde_residual_slice(phi: &PhiField, field: &SpaceTimeField, sigma: &Matrix, k: usize) -> (Vec<f64>, Vec<f64>) {
    let d = phi.dim();
    let n = phi.grid.len();
    let mut lap = vec![0.0; n];
    heat::trace_hessian(&phi.grid, sigma, &phi.phi[k], &mut lap);
    let rate = field.bidask_slice(k);
    let (lo, hi) = (k.saturating_sub(1), (k + 1).min(phi.steps()));
    let span = (hi - lo) as f64 * phi.dt;
    let mut res = vec![0.0; n];
    let mut terms = vec![0.0; n];
    for i in 0..n {
        let g = &phi.grad[k][i * d..(i + 1) * d];
        let mut quad = 0.0;
        for a in 0..d {
            for b in 0..d {
                quad += g[a] * sigma[(a, b)] * g[b];
            }
        }
        let parts = [
            (phi.phi[hi][i] - phi.phi[lo][i]) / span,
            0.5 * lap[i],
            0.5 * quad,
            phi.alpha * rate[i],
        ];
        res[i] = parts.iter().sum();
        terms[i] = parts.iter().map(|x| x.abs()).sum();
    }
    (res, terms)
}

/// Interior (central 80%) PDE residual at T/4, T/2, 3T/4.
pub fn pde_residual(phi: &PhiField, field: &SpaceTimeField, sigma: &Matrix) -> ResidualSummary {
    pde_residual_at(phi, field, sigma, &heat::residual_slices(phi.steps()))
}

pub fn pde_residual_at(phi: &PhiField, field: &SpaceTimeField, sigma: &Matrix, slices: &[usize]) -> ResidualSummary {
    let interior = phi.grid.interior(0.8);
    let mut summary = ResidualSummary::default();
    for &k in slices {
        let (res, terms) = pde_residual_slice(phi, field, sigma, k);
        summary.push(phi.times[k], &res, &terms, &interior);
    }
    summary
}

/// Drift of the price vector, Λ(t,y)Σ∇φ(t,y); the caller divides by price for
/// rates of return. Flags clamping.
pub fn risk_premium(phi: &PhiField, field: &SpaceTimeField, sigma: &Matrix, t: f64, y: &[f64]) -> (Vec<f64>, bool) {
    let d = phi.dim();
    let k = phi.slice_index(t);
    let mut lam = vec![0.0; d * d];
    let mut g = vec![0.0; d];
    let c1 = field.lambda_at(k, y, &mut lam);
    let c2 = phi.grad_at(k, y, &mut g);
    let sg: Vec<f64> = (0..d).map(|a| (0..d).map(|b| sigma[(a, b)] * g[b]).sum()).collect();
    let out = (0..d).map(|a| (0..d).map(|b| lam[a * d + b] * sg[b]).sum()).collect();
    (out, c1 || c2)
}

/// e^{−αw} / E[e^{−αw}].
pub fn sdf_realization(wealth: f64, mean_exp_neg_alpha_wealth: f64, alpha: f64) -> Result<f64> {
    if !(mean_exp_neg_alpha_wealth > 0.0) {
        return Err(Error::invalid("SDF normalizer must be positive"));
    }
    Ok((-alpha * wealth).exp() / mean_exp_neg_alpha_wealth)
}

/// SDF values for a sample of terminal wealths, normalized to mean one in
/// log space.
pub fn sdf_sample(wealth: &[f64], alpha: f64) -> Vec<f64> {
    if wealth.is_empty() {
        return Vec::new();
    }
    let shift = wealth.iter().map(|w| -alpha * w).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = wealth.iter().map(|w| (-alpha * w - shift).exp()).collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    e.into_iter().map(|x| x / mean).collect()
}

/// ψ(t,a) for the normal model; it does not depend on the imbalance z.
pub fn psi_gaussian(eq: &GaussianEquilibrium, t: f64, a: &[f64]) -> f64 {
    eq.psi(t, a)
}
