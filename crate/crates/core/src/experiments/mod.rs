//! End-to-end runs: transport → potential → field → φ, and the experiments
//! built on it.

pub mod gaussian;
pub mod lognormal;
pub mod options;
pub mod output;
pub mod simulation;
pub mod transport_run;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StageExt};
use crate::heat::{self, KernelOptions, SpaceTimeField, TransitionKernel};
use crate::linalg::Matrix;
use crate::potential::{self, BrenierPotential, RecoveryOptions};
use crate::risk::{self, PhiField};
use crate::transport::{self, Coupling, DiscreteMeasure, GridSpec, OtOptions, TransportMap};

/// Discretization shared by every numerical run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Source grid nodes per axis.
    pub source_nodes: usize,
    /// Source grid half-width in standard deviations of Z_T.
    pub source_half_width: f64,
    pub dt: f64,
    pub ot: OtOptions,
    pub recovery: RecoveryOptions,
    pub kernel: KernelOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source_nodes: 151,
            source_half_width: 4.0,
            dt: 0.01,
            ot: OtOptions::default(),
            recovery: RecoveryOptions::default(),
            kernel: KernelOptions::default(),
        }
    }
}

/// Every intermediate of one numerical solve.
pub struct Pipeline {
    pub source: DiscreteMeasure,
    pub coupling: Coupling,
    pub map: TransportMap,
    pub potential: BrenierPotential,
    pub kernel: TransitionKernel,
    pub field: SpaceTimeField,
    pub phi: PhiField,
}

/// Z_T ~ N(0, TΣ) on the configured source grid.
pub fn source_measure(sigma: &Matrix, horizon: f64, cfg: &PipelineConfig) -> Result<DiscreteMeasure> {
    let d = sigma.nrows();
    transport::build_gaussian_marginal(
        &vec![0.0; d],
        &(sigma * horizon),
        &GridSpec::uniform(d, cfg.source_nodes, cfg.source_half_width),
    )
}

pub fn run_pipeline(
    sigma: &Matrix,
    horizon: f64,
    target: &DiscreteMeasure,
    alpha: f64,
    beta: &[f64],
    cfg: &PipelineConfig,
) -> Result<Pipeline> {
    let source = source_measure(sigma, horizon, cfg).stage("source marginal")?;
    let coupling = transport::solve_quadratic_ot_with(&source, target, &cfg.ot).stage("optimal transport")?;
    let map = transport::extract_map(&coupling);
    let potential = potential::recover_potential_with(&map, &source, &cfg.recovery).stage("potential recovery")?;
    let kernel =
        heat::build_kernel_with(sigma, cfg.dt, potential.grid(), &cfg.kernel).stage("transition kernel")?;
    let field = heat::propagate(&potential, &kernel, horizon).stage("field propagation")?;
    let phi = risk::solve_phi(&field, &potential, &kernel, alpha, beta).stage("φ recursion")?;
    Ok(Pipeline {
        source,
        coupling,
        map,
        potential,
        kernel,
        field,
        phi,
    })
}

/// Field and φ from a potential known in closed form on the source grid.
pub fn run_from_potential(
    sigma: &Matrix,
    horizon: f64,
    potential: &BrenierPotential,
    alpha: f64,
    beta: &[f64],
    cfg: &PipelineConfig,
) -> Result<(TransitionKernel, SpaceTimeField, PhiField)> {
    let kernel =
        heat::build_kernel_with(sigma, cfg.dt, potential.grid(), &cfg.kernel).stage("transition kernel")?;
    let field = heat::propagate(potential, &kernel, horizon).stage("field propagation")?;
    let phi = risk::solve_phi(&field, potential, &kernel, alpha, beta).stage("φ recursion")?;
    Ok((kernel, field, phi))
}

/// Half-width for a `nodes`-point grid whose outer cell edges sit where
/// those of a `source_nodes`-point grid of half-width `source_half_width` do,
/// both in standard deviations. Density-weighted grids truncate their
/// distribution half a cell beyond the outer nodes; unequal truncation bends
/// the discrete quantile map near the edges.
pub fn matched_half_width(source_half_width: f64, source_nodes: usize, nodes: usize) -> f64 {
    let edge = source_half_width * (1.0 + 1.0 / (source_nodes - 1) as f64);
    edge * (nodes - 1) as f64 / nodes as f64
}

/// max |a − b| / max |b| over the listed indices.
pub(crate) fn relative_sup(a: &[f64], b: &[f64], idx: impl Iterator<Item = usize> + Clone) -> f64 {
    let num = idx.clone().map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max);
    let den = idx.map(|i| b[i].abs()).fold(0.0, f64::max);
    if den > 0.0 {
        num / den
    } else {
        num
    }
}
