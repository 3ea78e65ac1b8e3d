//! Single-asset example with a winsorized lognormal value: closed forms
//! against the grid propagation, and the sign of the risk premium.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::output::OutputDir;
use super::{matched_half_width, run_from_potential, run_pipeline, source_measure, PipelineConfig};
use crate::error::{Error, Result, StageExt};
use crate::grid::Axis;
use crate::heat::{self, ResidualSummary, SpaceTimeField};
use crate::linalg::Matrix;
use crate::lognormal::LognormalSpec;
use crate::potential::BrenierPotential;
use crate::risk::{self, PhiField};
use crate::sim::{self, DriftLookup, Estimate, FieldModel, SimConfig};
use crate::stats;
use crate::transport::{self, DiscreteMeasure, DualityReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LognormalExampleConfig {
    /// Mean and standard deviation of the lognormal before winsorization.
    pub mean: f64,
    pub sd: f64,
    pub v_star: Option<f64>,
    pub sigma_z: f64,
    pub horizon: f64,
    pub alpha: f64,
    pub betas: Vec<f64>,
    pub pipeline: PipelineConfig,
    pub target_nodes: usize,
    pub n_paths: usize,
    pub seed: u64,
    /// Relative tolerance of the closed-form comparison.
    pub tolerance: f64,
    /// Fractions of T at which closed forms and the grid are compared.
    pub compare_at: Vec<f64>,
    /// Closed forms are compared for |y| up to this many standard deviations
    /// of Z_T; the source grid extends further so that the boundary
    /// extrapolation stays away from the comparison region.
    pub compare_half_width: f64,
    pub density_points: usize,
}

impl Default for LognormalExampleConfig {
    fn default() -> Self {
        Self {
            mean: 100.0,
            sd: 15.0,
            v_star: Some(160.0),
            sigma_z: 1.0,
            horizon: 1.0,
            alpha: 0.2,
            betas: vec![1.0, -1.0],
            pipeline: PipelineConfig {
                source_nodes: 226,
                source_half_width: 6.0,
                ..PipelineConfig::default()
            },
            target_nodes: 1001,
            n_paths: 10_000,
            seed: 0,
            tolerance: 5e-3,
            compare_at: vec![0.0, 0.25, 0.5, 0.75],
            compare_half_width: 3.2,
            density_points: 201,
        }
    }
}

impl LognormalExampleConfig {
    pub fn spec(&self) -> Result<LognormalSpec> {
        LognormalSpec::from_moments(self.mean, self.sd, self.sigma_z, self.horizon, self.v_star)
    }
}

/// ṽ on `nodes` points equispaced in log value, weighted by the normal
/// density of the log; nodes above v* are merged into an atom at v*.
pub fn winsorized_target(spec: &LognormalSpec, nodes: usize, half_width: f64) -> Result<DiscreteMeasure> {
    let axis = Axis::centered(0.0, half_width, nodes)?;
    let x_star = spec.x_star().unwrap_or(f64::INFINITY);
    let mut values = Vec::with_capacity(nodes + 1);
    let mut weights = Vec::with_capacity(nodes + 1);
    let mut atom = 0.0;
    for k in 0..nodes {
        let x = axis.node(k);
        let w = (-0.5 * x * x).exp();
        if x < x_star {
            values.push((spec.m + spec.sigma_v * x).exp());
            weights.push(w);
        } else {
            atom += w;
        }
    }
    if atom > 0.0 {
        values.push(spec.v_star.unwrap_or(f64::INFINITY));
        weights.push(atom);
    }
    transport::build_value_marginal(1, values, weights)
}

/// Closed-form Γ(T,·) and ∇Γ on the source grid.
pub fn closed_form_potential(spec: &LognormalSpec, source: &DiscreteMeasure) -> Result<BrenierPotential> {
    let grid = source
        .grid()
        .cloned()
        .ok_or_else(|| Error::invalid("closed-form potential needs a source on a grid"))?;
    let mut values = Vec::with_capacity(grid.len());
    let mut gradient = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let y = grid.coords(i)[0];
        values.push(spec.fields(spec.horizon, y).gamma_terminal);
        gradient.push(spec.map(y));
    }
    BrenierPotential::from_parts(grid, values, gradient, source)
}

/// Worst errors of a propagated field against the closed forms for
/// |y| ≤ `reach`: Γ relative to its largest magnitude, price and lambda
/// pointwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormComparison {
    pub times: Vec<f64>,
    pub gamma_error: Vec<f64>,
    pub price_error: Vec<f64>,
    pub lambda_error: Vec<f64>,
    pub max_error: f64,
    pub pass: bool,
}

pub fn compare_closed_form(
    spec: &LognormalSpec,
    field: &SpaceTimeField,
    compare_at: &[f64],
    reach: f64,
    tolerance: f64,
) -> ClosedFormComparison {
    let grid = field.grid();
    let interior: Vec<usize> = (0..grid.len()).filter(|&i| grid.coords(i)[0].abs() <= reach).collect();
    let mut out = ClosedFormComparison {
        times: Vec::new(),
        gamma_error: Vec::new(),
        price_error: Vec::new(),
        lambda_error: Vec::new(),
        max_error: 0.0,
        pass: false,
    };
    for &frac in compare_at {
        let k = field.slice_index(frac * spec.horizon);
        let t = field.times()[k];
        let (mut g_num, mut g_den, mut p_err, mut l_err) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for &i in &interior {
            let y = grid.coords(i)[0];
            let cf = spec.fields(t, y);
            g_num = g_num.max((field.gamma(k)[i] - cf.gamma).abs());
            g_den = g_den.max(cf.gamma.abs());
            p_err = p_err.max((field.price(k)[i] - cf.price).abs() / cf.price.abs());
            l_err = l_err.max((field.lambda(k)[i] - cf.lambda).abs() / cf.lambda.abs());
        }
        let g_err = if g_den > 0.0 { g_num / g_den } else { g_num };
        out.times.push(t);
        out.gamma_error.push(g_err);
        out.price_error.push(p_err);
        out.lambda_error.push(l_err);
        out.max_error = out.max_error.max(g_err).max(p_err).max(l_err);
    }
    out.pass = out.max_error <= tolerance;
    out
}

/// Heat and φ residuals at a base discretization and with Δt and the grid
/// spacing both halved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub coarse_heat: ResidualSummary,
    pub fine_heat: ResidualSummary,
    pub coarse_pde: ResidualSummary,
    pub fine_pde: ResidualSummary,
    /// Coarse over fine maximal relative residual.
    pub heat_ratio: f64,
    pub pde_ratio: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn residuals(
    spec: &LognormalSpec,
    alpha: f64,
    beta: f64,
    cfg: &PipelineConfig,
) -> Result<(ResidualSummary, ResidualSummary)> {
    let sigma = Matrix::from_element(1, 1, spec.sigma_z * spec.sigma_z);
    let source = source_measure(&sigma, spec.horizon, cfg)?;
    let potential = closed_form_potential(spec, &source)?;
    let (_, field, phi) = run_from_potential(&sigma, spec.horizon, &potential, alpha, &[beta], cfg)?;
    Ok((
        heat::heat_residual(&field, &sigma),
        risk::pde_residual(&phi, &field, &sigma),
    ))
}

/// First-order evidence: residuals at the defaults are within `tolerance`
/// and fall by at least a factor 1.5 under refinement.
pub fn residual_convergence(
    spec: &LognormalSpec,
    alpha: f64,
    beta: f64,
    base: &PipelineConfig,
    tolerance: f64,
) -> Result<ConvergenceReport> {
    let (coarse_heat, coarse_pde) = residuals(spec, alpha, beta, base)?;
    let fine_cfg = PipelineConfig {
        source_nodes: 2 * base.source_nodes - 1,
        dt: base.dt / 2.0,
        ..base.clone()
    };
    let (fine_heat, fine_pde) = residuals(spec, alpha, beta, &fine_cfg)?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::INFINITY };
    let heat_ratio = ratio(coarse_heat.max_relative, fine_heat.max_relative);
    let pde_ratio = ratio(coarse_pde.max_relative, fine_pde.max_relative);
    let pass = coarse_heat.max_relative <= tolerance
        && coarse_pde.max_relative <= tolerance
        && heat_ratio >= 1.5
        && pde_ratio >= 1.5;
    Ok(ConvergenceReport {
        coarse_heat,
        fine_heat,
        coarse_pde,
        fine_pde,
        heat_ratio,
        pde_ratio,
        tolerance,
        pass,
    })
}

/// Physical and risk-neutral densities of the terminal price on a common grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityOverlay {
    pub x: Vec<f64>,
    pub physical: Vec<f64>,
    pub risk_neutral: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PremiumCase {
    pub beta: f64,
    pub p0: f64,
    pub physical_mean: Estimate,
    pub risk_neutral_mean: Estimate,
    /// E[ṽ] − P_0 under the physical measure.
    pub premium: Estimate,
    pub sign_matches: bool,
    pub clamped_fraction: f64,
    pub density: DensityOverlay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LognormalReport {
    pub spec: LognormalSpec,
    /// Closed-form terminal map propagated on the grid.
    pub closed_form: ClosedFormComparison,
    /// Same comparison for the field built from the numerical transport.
    pub pipeline_closed_form: ClosedFormComparison,
    /// Interior sup-relative error of the transport map against e^{m+λ(y∧y*)}.
    pub map_error: f64,
    pub duality: DualityReport,
    pub convergence: ConvergenceReport,
    pub cases: Vec<PremiumCase>,
    pub pass: bool,
}

fn density_overlay(physical: &[f64], risk_neutral: &[f64], points: usize) -> Result<DensityOverlay> {
    let lo = physical.iter().chain(risk_neutral).cloned().fold(f64::INFINITY, f64::min);
    let hi = physical.iter().chain(risk_neutral).cloned().fold(f64::NEG_INFINITY, f64::max);
    let x: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64)
        .collect();
    Ok(DensityOverlay {
        physical: stats::kde_1d(physical, None)?.evaluate(&x),
        risk_neutral: stats::kde_1d(risk_neutral, None)?.evaluate(&x),
        x,
    })
}

fn premium_case(field: &SpaceTimeField, phi: &PhiField, beta: f64, cfg: &LognormalExampleConfig) -> Result<PremiumCase> {
    let sim_cfg = SimConfig {
        n_paths: cfg.n_paths,
        dt: cfg.pipeline.dt,
        seed: cfg.seed,
        ..SimConfig::default()
    };
    let physical = FieldModel::new(field, Some(phi), DriftLookup::Nearest)?;
    let phys = sim::simulate_physical(&physical, &[beta], &sim_cfg).stage("physical simulation")?;
    let neutral = FieldModel::new(field, None, DriftLookup::Nearest)?;
    let rn = sim::simulate_risk_neutral(&neutral, &[beta], &sim_cfg).stage("risk-neutral simulation")?;
    let mut p = [0.0];
    field.price_at(0, &[0.0], &mut p);
    let p0 = p[0];
    let phys_p = phys.p_end();
    let rn_p = rn.p_end();
    let physical_mean = Estimate::of(&phys_p);
    let premium = Estimate {
        mean: physical_mean.mean - p0,
        se: physical_mean.se,
    };
    Ok(PremiumCase {
        beta,
        p0,
        physical_mean,
        risk_neutral_mean: Estimate::of(&rn_p),
        premium,
        sign_matches: beta == 0.0 || premium.mean.signum() == beta.signum(),
        clamped_fraction: phys.summary().clamped_fraction,
        density: density_overlay(&phys_p, &rn_p, cfg.density_points)?,
    })
}

/// Runs the full example; artifacts go to `out` when given.
pub fn run_lognormal_example(cfg: &LognormalExampleConfig, out: Option<&OutputDir>) -> Result<LognormalReport> {
    if cfg.betas.is_empty() {
        return Err(Error::invalid("lognormal example needs at least one β"));
    }
    let spec = cfg.spec()?;
    let sigma = Matrix::from_element(1, 1, spec.sigma_z * spec.sigma_z);
    let pc = &cfg.pipeline;
    let reach = cfg.compare_half_width * spec.noise_sd() * (1.0 + 1e-9);

    // Closed-form terminal map through the grid propagation.
    let source = source_measure(&sigma, spec.horizon, pc).stage("source marginal")?;
    let cf_potential = closed_form_potential(&spec, &source).stage("closed-form potential")?;
    let (_, cf_field, _) = run_from_potential(&sigma, spec.horizon, &cf_potential, 0.0, &[0.0], pc)?;
    let closed_form = compare_closed_form(&spec, &cf_field, &cfg.compare_at, reach, cfg.tolerance);

    // Numerical transport to the winsorized value grid.
    let hw = matched_half_width(pc.source_half_width, pc.source_nodes, cfg.target_nodes);
    let target = winsorized_target(&spec, cfg.target_nodes, hw).stage("value marginal")?;
    let run = run_pipeline(&sigma, spec.horizon, &target, cfg.alpha, &[cfg.betas[0]], pc)?;
    let pipeline_closed_form = compare_closed_form(&spec, &run.field, &cfg.compare_at, reach, cfg.tolerance);
    let grid = run.field.grid();
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for i in 0..grid.len() {
        let y = grid.coords(i)[0];
        if y.abs() > reach {
            continue;
        }
        let exact = spec.map(y);
        num = num.max((run.map.image(i)[0] - exact).abs());
        den = den.max(exact.abs());
    }
    let map_error = num / den;
    let duality = transport::duality_report(&run.coupling, &run.potential);

    let convergence = residual_convergence(&spec, cfg.alpha, cfg.betas[0], pc, cfg.tolerance)?;

    let mut cases = Vec::new();
    for (n, &beta) in cfg.betas.iter().enumerate() {
        let phi = if n == 0 {
            run.phi.clone()
        } else {
            risk::solve_phi(&run.field, &run.potential, &run.kernel, cfg.alpha, &[beta]).stage("φ recursion")?
        };
        cases.push(premium_case(&run.field, &phi, beta, cfg)?);
        if let Some(out) = out {
            let tag = beta_tag(beta);
            let mut w = out.csv("fields", &format!("lognormal_phi_{tag}.csv"))?;
            phi.write_slice_csv(phi.slice_index(0.5 * spec.horizon), &mut w)?;
            w.flush()?;
        }
    }

    if let Some(out) = out {
        write_artifacts(out, &spec, &cf_field, &run.field, &cases)?;
    }

    let pass = closed_form.pass && convergence.pass && cases.iter().all(|c| c.sign_matches);
    Ok(LognormalReport {
        spec,
        closed_form,
        pipeline_closed_form,
        map_error,
        duality,
        convergence,
        cases,
        pass,
    })
}

fn beta_tag(beta: f64) -> String {
    if beta < 0.0 {
        format!("beta_m{}", -beta)
    } else {
        format!("beta_p{beta}")
    }
}

fn write_artifacts(
    out: &OutputDir,
    spec: &LognormalSpec,
    cf_field: &SpaceTimeField,
    field: &SpaceTimeField,
    cases: &[PremiumCase],
) -> Result<()> {
    for frac in [0.0, 0.5] {
        let k = field.slice_index(frac * spec.horizon);
        let mut w = out.csv("fields", &format!("lognormal_field_t{frac}.csv"))?;
        field.write_slice_csv(k, &mut w)?;
        w.flush()?;
    }
    let mut w = out.csv("figures_data", "lognormal_closed_form.csv")?;
    writeln!(w, "t,y,gamma_closed,gamma_grid,price_closed,price_grid,lambda_closed,lambda_grid")?;
    let grid = cf_field.grid();
    for frac in [0.0, 0.25, 0.5, 0.75] {
        let k = cf_field.slice_index(frac * spec.horizon);
        let t = cf_field.times()[k];
        for i in 0..grid.len() {
            let y = grid.coords(i)[0];
            let cf = spec.fields(t, y);
            writeln!(
                w,
                "{t},{y},{},{},{},{},{},{}",
                cf.gamma,
                cf_field.gamma(k)[i],
                cf.price,
                cf_field.price(k)[i],
                cf.lambda,
                cf_field.lambda(k)[i]
            )?;
        }
    }
    w.flush()?;
    for case in cases {
        let mut w = out.csv("figures_data", &format!("lognormal_density_{}.csv", beta_tag(case.beta)))?;
        writeln!(w, "v,physical,risk_neutral")?;
        for ((x, p), q) in case.density.x.iter().zip(&case.density.physical).zip(&case.density.risk_neutral) {
            writeln!(w, "{x},{p},{q}")?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn winsorized_target_has_an_atom_at_the_cap() {
        let spec = LognormalSpec::from_moments(100.0, 15.0, 1.0, 1.0, Some(160.0)).unwrap();
        let m = winsorized_target(&spec, 401, 4.0).unwrap();
        let last = m.len() - 1;
        assert_eq!(m.point(last)[0], 160.0);
        assert!(m.points().iter().all(|&v| v <= 160.0));
        assert!(m.weights()[last] > 0.0 && m.weights()[last] < 1e-2);
    }
}
