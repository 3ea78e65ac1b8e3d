//! Stand-alone transport solve: Gaussian order-flow source to a configured
//! value marginal, with the recovered potential and the duality report.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::options::map_jump_ratio;
use super::output::OutputDir;
use crate::error::{Error, Result, StageExt};
use crate::linalg;
use crate::potential::{self, RecoveryOptions};
use crate::transport::{self, DiscreteMeasure, DualityReport, GridSpec, OtOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginalConfig {
    /// Normal law on a uniform grid; `half_width` in standard deviations.
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
        nodes: usize,
        half_width: f64,
    },
    /// e^X with X ~ N(mu, sigma²) on log-equispaced nodes.
    Lognormal {
        mu: f64,
        sigma: f64,
        nodes: usize,
        half_width: f64,
    },
    /// Pairs (v, (v − K)⁺) with v lognormal.
    StockCall {
        mu: f64,
        sigma: f64,
        nodes: usize,
        half_width: f64,
        strike: f64,
    },
}

impl MarginalConfig {
    pub fn build(&self) -> Result<DiscreteMeasure> {
        match self {
            Self::Gaussian {
                mean,
                cov,
                nodes,
                half_width,
            } => {
                let cov = linalg::matrix_from_rows(cov)?;
                transport::build_gaussian_marginal(mean, &cov, &GridSpec::uniform(mean.len(), *nodes, *half_width))
            }
            Self::Lognormal {
                mu,
                sigma,
                nodes,
                half_width,
            } => {
                let (v, w) = transport::lognormal_nodes(*mu, *sigma, *half_width, *nodes)?;
                transport::build_value_marginal(1, v, w)
            }
            Self::StockCall {
                mu,
                sigma,
                nodes,
                half_width,
                strike,
            } => transport::call_payoff_marginal(*mu, *sigma, *half_width, *nodes, *strike),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportRunConfig {
    /// Z_T ~ N(0, TΣ) on a uniform grid.
    pub sigma: Vec<Vec<f64>>,
    pub horizon: f64,
    pub source_nodes: usize,
    pub source_half_width: f64,
    pub target: MarginalConfig,
    pub ot: OtOptions,
    pub recovery: RecoveryOptions,
    /// Relative duality gap allowed by the check.
    pub tolerance: f64,
    /// Require a visible discontinuity in the map (largest neighbour jump
    /// over ten times the median).
    pub expect_discontinuity: bool,
}

impl Default for TransportRunConfig {
    fn default() -> Self {
        Self {
            sigma: vec![vec![1.0]],
            horizon: 1.0,
            source_nodes: 401,
            source_half_width: 4.0,
            target: MarginalConfig::Gaussian {
                mean: vec![0.0],
                cov: vec![vec![4.0]],
                nodes: 401,
                half_width: 4.0,
            },
            ot: OtOptions::default(),
            recovery: RecoveryOptions::default(),
            tolerance: 1e-2,
            expect_discontinuity: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportRunReport {
    pub cost: f64,
    pub w2: f64,
    pub pivots: usize,
    pub duality: DualityReport,
    pub relative_gap: f64,
    pub map_jump_ratio: f64,
    pub undefined_nodes: usize,
    pub convexity_defect: f64,
    pub curl: f64,
    pub pass: bool,
}

pub fn run_transport(cfg: &TransportRunConfig, out: Option<&OutputDir>) -> Result<TransportRunReport> {
    let sigma = linalg::matrix_from_rows(&cfg.sigma)?;
    let d = sigma.nrows();
    if !(cfg.horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let source = transport::build_gaussian_marginal(
        &vec![0.0; d],
        &(sigma * cfg.horizon),
        &GridSpec::uniform(d, cfg.source_nodes, cfg.source_half_width),
    )
    .stage("source marginal")?;
    let target = cfg.target.build().stage("target marginal")?;
    let coupling = transport::solve_quadratic_ot_with(&source, &target, &cfg.ot).stage("optimal transport")?;
    let map = transport::extract_map(&coupling);
    let potential = potential::recover_potential_with(&map, &source, &cfg.recovery).stage("potential recovery")?;
    let duality = transport::duality_report(&coupling, &potential);
    let relative_gap = duality.gap.abs() / duality.scale.max(f64::MIN_POSITIVE);
    let jump = map_jump_ratio(&map);
    let pass = relative_gap <= cfg.tolerance
        && duality.marginal_residual <= 1e-8
        && (!cfg.expect_discontinuity || jump > 10.0);

    if let Some(out) = out {
        let mut w = out.csv("fields", "map.csv")?;
        map.write_csv(&mut w)?;
        w.flush()?;
        let mut w = out.csv("fields", "potential.csv")?;
        potential.write_csv(&mut w)?;
        w.flush()?;
        let mut w = out.csv("fields", "coupling.csv")?;
        coupling.write_csv(&mut w)?;
        w.flush()?;
        let d = &duality;
        let body = format!(
            "primal E[v·y]      {}\nE[Γ] + E[Γ*]       {}\ngap                {}\nW2 identity        {}\nLP primal / dual   {} / {}\nmarginal residual  {}\n",
            d.primal, d.conjugate_sum, d.gap, d.identity, d.lp_primal, d.lp_dual, d.marginal_residual
        );
        out.text("tables", "duality.txt", &body)?;
    }

    Ok(TransportRunReport {
        cost: coupling.cost(),
        w2: coupling.cost().max(0.0).sqrt(),
        pivots: coupling.pivots(),
        relative_gap,
        map_jump_ratio: jump,
        undefined_nodes: map.undefined_count(),
        convexity_defect: potential.convexity_defect(),
        curl: potential.diagnostics().curl_residual,
        duality,
        pass,
    })
}
