//! Numerical pipeline against the closed-form normal equilibrium.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{matched_half_width, relative_sup, run_pipeline, PipelineConfig};
use crate::error::{Result, StageExt};
use crate::gaussian::{self, GaussianEquilibrium, GaussianInputs};
use crate::linalg::{self, Matrix};
use crate::transport::{build_gaussian_marginal, DiscreteMeasure, GridSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianSuiteConfig {
    pub dims: Vec<usize>,
    pub alphas: Vec<f64>,
    /// Each entry is used for every component of β.
    pub betas: Vec<f64>,
    pub horizon: f64,
    pub pipeline: PipelineConfig,
    /// Source nodes per axis for two-asset cases.
    pub source_nodes_2d: usize,
    /// Value-grid nodes for one asset and per axis for two.
    pub target_nodes_1d: usize,
    pub target_nodes_2d: usize,
    /// Value-grid half-width in standard deviations; by default chosen so
    /// that the value grid's cells truncate the distribution where the
    /// source grid's cells do.
    pub target_half_width: Option<f64>,
    /// Relative error allowed for Λ, S and the drift.
    pub tolerance: f64,
    /// Times, as fractions of T, at which Λ and the drift are compared.
    pub compare_at: Vec<f64>,
    /// Risk-aversion grid for the monotonicity table.
    pub monotonicity_alphas: Vec<f64>,
    /// Mahalanobis radius of the central comparison region.
    pub core_radius: f64,
}

impl Default for GaussianSuiteConfig {
    fn default() -> Self {
        Self {
            dims: vec![1, 2],
            alphas: vec![0.0, 0.1, 0.2],
            betas: vec![0.0, 1.0],
            horizon: 1.0,
            pipeline: PipelineConfig::default(),
            source_nodes_2d: 121,
            target_nodes_1d: 1001,
            target_nodes_2d: 41,
            target_half_width: None,
            tolerance: 0.02,
            compare_at: vec![0.0, 0.5],
            monotonicity_alphas: vec![0.0, 0.1, 0.2, 0.5],
            core_radius: 2.0,
        }
    }
}

/// Physical inputs used by the suite in one and two dimensions.
pub fn suite_inputs(dim: usize, alpha: f64, beta: f64, horizon: f64) -> GaussianInputs {
    match dim {
        1 => GaussianInputs::univariate(0.0, 1.0, 1.0, alpha, beta, horizon),
        _ => GaussianInputs {
            m_hat: vec![0.0, 0.0],
            s_hat: vec![vec![1.0, 0.3], vec![0.3, 0.5]],
            sigma: vec![vec![1.0, -0.4], vec![-0.4, 0.8]],
            alpha,
            beta: vec![beta; 2],
            horizon,
        },
    }
}

/// Risk-neutral distribution N(m, S) of ṽ on a tensor grid.
pub fn risk_neutral_target(eq: &GaussianEquilibrium, nodes: usize, half_width: f64) -> Result<DiscreteMeasure> {
    let d = eq.dim();
    let mean: Vec<f64> = eq.m().iter().cloned().collect();
    build_gaussian_marginal(&mean, eq.s_matrix(), &GridSpec::uniform(d, nodes, half_width))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianCaseReport {
    pub dim: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_error: f64,
    pub s_error: f64,
    pub drift_error: f64,
    /// Λ and drift errors on nodes within Mahalanobis radius `core_radius`
    /// of Z_T, where the transport map is not shaped by grid truncation.
    pub core_radius: f64,
    pub lambda_error_core: f64,
    pub drift_error_core: f64,
    pub max_error: f64,
    pub seconds: f64,
    pub pass: bool,
}

pub fn run_gaussian_case(dim: usize, alpha: f64, beta: f64, cfg: &GaussianSuiteConfig) -> Result<GaussianCaseReport> {
    let start = Instant::now();
    let inputs = suite_inputs(dim, alpha, beta, cfg.horizon);
    let eq = gaussian::calibrate(&inputs).stage("calibration")?;
    let nodes = if dim == 1 { cfg.target_nodes_1d } else { cfg.target_nodes_2d };
    let mut pc = cfg.pipeline.clone();
    if dim > 1 {
        pc.source_nodes = cfg.source_nodes_2d;
    }
    let hw = cfg
        .target_half_width
        .unwrap_or_else(|| matched_half_width(pc.source_half_width, pc.source_nodes, nodes));
    let target = risk_neutral_target(&eq, nodes, hw).stage("value marginal")?;
    let run = run_pipeline(eq.sigma(), cfg.horizon, &target, alpha, eq.beta().as_slice(), &pc)?;
    let grid = run.field.grid();
    let interior = grid.interior(0.8);
    let d = dim;
    let precision = linalg::spd_inverse(&(eq.sigma() * cfg.horizon), "covariance")?;
    let mut y = vec![0.0; d];
    let core: Vec<usize> = interior
        .iter()
        .cloned()
        .filter(|&i| {
            grid.coords_into(i, &mut y);
            let q: f64 = (0..d)
                .flat_map(|a| (0..d).map(move |b| (a, b)))
                .map(|(a, b)| y[a] * precision[(a, b)] * y[b])
                .sum();
            q.sqrt() <= cfg.core_radius
        })
        .collect();
    let (lambda_error, drift_error) = field_errors(&run, &eq, &interior, &cfg.compare_at, cfg.horizon)?;
    let (lambda_error_core, drift_error_core) = field_errors(&run, &eq, &core, &cfg.compare_at, cfg.horizon)?;

    // Covariance of the barycentric map pushed forward by the source weights.
    let map = &run.map;
    let w = run.source.weights();
    let mut mean = vec![0.0; d];
    for (i, wi) in w.iter().enumerate() {
        for a in 0..d {
            mean[a] += wi * map.image(i)[a];
        }
    }
    let mut s_num = Matrix::zeros(d, d);
    for (i, wi) in w.iter().enumerate() {
        let img = map.image(i);
        for a in 0..d {
            for b in 0..d {
                s_num[(a, b)] += wi * (img[a] - mean[a]) * (img[b] - mean[b]);
            }
        }
    }
    let s_error = (&s_num - eq.s_matrix()).amax() / eq.s_matrix().amax();
    let max_error = lambda_error.max(s_error).max(drift_error);
    Ok(GaussianCaseReport {
        dim,
        alpha,
        beta,
        lambda_error,
        s_error,
        drift_error,
        core_radius: cfg.core_radius,
        lambda_error_core,
        drift_error_core,
        max_error,
        seconds: start.elapsed().as_secs_f64(),
        pass: max_error <= cfg.tolerance,
    })
}

/// Sup-relative errors of Λ and the physical drift over `nodes` at the
/// listed fractions of T.
fn field_errors(
    run: &super::Pipeline,
    eq: &GaussianEquilibrium,
    nodes: &[usize],
    compare_at: &[f64],
    horizon: f64,
) -> Result<(f64, f64)> {
    if nodes.is_empty() {
        return Ok((0.0, 0.0));
    }
    let grid = run.field.grid();
    let d = eq.dim();
    let exact_lambda: Vec<f64> = eq.lambda_matrix().transpose().iter().cloned().collect();
    let sigma = eq.sigma();
    let mut y = vec![0.0; d];
    let mut lambda_error: f64 = 0.0;
    let mut drift_error: f64 = 0.0;
    for &frac in compare_at {
        let k = run.field.slice_index(frac * horizon);
        let lam = run.field.lambda(k);
        let mut num = Vec::new();
        let mut exact = Vec::new();
        for &i in nodes {
            num.extend_from_slice(&lam[i * d * d..(i + 1) * d * d]);
            exact.extend_from_slice(&exact_lambda);
        }
        lambda_error = lambda_error.max(relative_sup(&num, &exact, 0..num.len()));

        let grad = run.phi.grad(k);
        let mut num = Vec::new();
        let mut exact = Vec::new();
        for &i in nodes {
            grid.coords_into(i, &mut y);
            let g = &grad[i * d..(i + 1) * d];
            for a in 0..d {
                num.push((0..d).map(|b| sigma[(a, b)] * g[b]).sum());
            }
            exact.extend(eq.physical_drift(run.field.times()[k], &y)?.iter());
        }
        drift_error = drift_error.max(relative_sup(&num, &exact, 0..num.len()));
    }
    Ok((lambda_error, drift_error))
}

/// Smallest eigenvalues of S, Λ and A_t differences between consecutive
/// risk aversions, and the change in unconditional informed profit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityRow {
    pub dim: usize,
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub min_eig_s: f64,
    pub min_eig_lambda: f64,
    /// At t = 0, T/2, T.
    pub min_eig_a: [f64; 3],
    pub profit_increase: f64,
    pub pass: bool,
}

pub fn monotonicity_table(dim: usize, alphas: &[f64], beta: f64, horizon: f64) -> Result<Vec<MonotonicityRow>> {
    let eqs = alphas
        .iter()
        .map(|&a| gaussian::calibrate(&suite_inputs(dim, a, beta, horizon)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for w in 0..eqs.len().saturating_sub(1) {
        let (lo, hi) = (&eqs[w], &eqs[w + 1]);
        let mut a = [0.0; 3];
        for (slot, frac) in a.iter_mut().zip([0.0, 0.5, 1.0]) {
            let t = frac * horizon;
            *slot = linalg::min_eigenvalue(&(hi.a_matrix(t)? - lo.a_matrix(t)?));
        }
        let min_eig_s = linalg::min_eigenvalue(&(hi.s_matrix() - lo.s_matrix()));
        let min_eig_lambda = linalg::min_eigenvalue(&(hi.lambda_matrix() - lo.lambda_matrix()));
        let profit_increase = hi.profits(None).informed_unconditional - lo.profits(None).informed_unconditional;
        rows.push(MonotonicityRow {
            dim,
            alpha_lo: alphas[w],
            alpha_hi: alphas[w + 1],
            min_eig_s,
            min_eig_lambda,
            min_eig_a: a,
            profit_increase,
            pass: min_eig_s > 0.0 && min_eig_lambda > 0.0 && a.iter().all(|&x| x > 0.0) && profit_increase > 0.0,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcessVolatility {
    pub dim: usize,
    pub alpha: f64,
    pub trace_gap: f64,
    pub min_eig_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSuiteReport {
    pub cases: Vec<GaussianCaseReport>,
    pub monotonicity: Vec<MonotonicityRow>,
    pub excess_volatility: Vec<ExcessVolatility>,
    pub equilibria: Vec<crate::gaussian::EquilibriumReport>,
    pub pass: bool,
}

pub fn run_gaussian_suite(cfg: &GaussianSuiteConfig) -> Result<GaussianSuiteReport> {
    let mut cases = Vec::new();
    let mut monotonicity = Vec::new();
    let mut excess_volatility = Vec::new();
    let mut equilibria = Vec::new();
    for &dim in &cfg.dims {
        for &alpha in &cfg.alphas {
            for &beta in &cfg.betas {
                cases.push(run_gaussian_case(dim, alpha, beta, cfg)?);
                equilibria.push(gaussian::calibrate(&suite_inputs(dim, alpha, beta, cfg.horizon))?.report());
            }
            let eq = gaussian::calibrate(&suite_inputs(dim, alpha, 0.0, cfg.horizon))?;
            let gap = eq.s_matrix() - eq.s_hat();
            excess_volatility.push(ExcessVolatility {
                dim,
                alpha,
                trace_gap: gap.trace(),
                min_eig_gap: linalg::min_eigenvalue(&gap),
            });
        }
        for &beta in &cfg.betas {
            monotonicity.extend(monotonicity_table(dim, &cfg.monotonicity_alphas, beta, cfg.horizon)?);
        }
    }
    let pass = cases.iter().all(|c| c.pass)
        && monotonicity.iter().all(|r| r.pass)
        && excess_volatility.iter().all(|e| e.alpha == 0.0 || e.trace_gap > 0.0);
    Ok(GaussianSuiteReport {
        cases,
        monotonicity,
        excess_volatility,
        equilibria,
        pass,
    })
}
