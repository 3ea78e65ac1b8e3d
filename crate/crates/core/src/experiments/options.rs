//! Informed trading in a stock and a call on it: fields at the midpoint,
//! physical simulations, densities, dealer profits and the regressions of
//! the stock risk premium on implied volatility.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::output::OutputDir;
use super::{run_pipeline, Pipeline, PipelineConfig};
use crate::error::{Error, Result, StageExt};
use crate::heat::{self, SpaceTimeField};
use crate::linalg::{self, Matrix};
use crate::lognormal::{implied_vol, norm_pdf};
use crate::risk::{self, PhiField};
use crate::sim::{self, DriftLookup, FieldModel, SimBatch, SimConfig, SimMode};
use crate::stats::{self, RegressionResult};
use crate::transport::{self, TransportMap};

pub const INTERCEPT: &str = "Intercept";
pub const DELTA_IV: &str = "Δ Implied vol";
pub const STOCK_RETURN: &str = "Stock return";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptionsExperimentConfig {
    /// Log volatility of the stock value.
    pub sigma: f64,
    pub strike: f64,
    pub horizon: f64,
    pub alpha: f64,
    /// Dealer endowment in (stock, call).
    pub beta: [f64; 2],
    /// Noise covariances, one experiment each.
    pub sigmas: Vec<[[f64; 2]; 2]>,
    /// Log-value grid: nodes and half-width in units of `sigma`.
    pub value_nodes: usize,
    pub value_half_width: f64,
    pub pipeline: PipelineConfig,
    pub n_paths: usize,
    pub seed: u64,
    pub drift_lookup: DriftLookup,
    /// Date of the field exports and the regressions.
    pub slice_time: f64,
    /// Implied volatility every path starts from.
    pub initial_vol: f64,
    pub kde_points: usize,
    pub kde_2d_points: usize,
    pub profit_bins: usize,
    /// Extra seeds for the coefficient dispersion report; 0 skips it.
    pub dispersion_seeds: usize,
}

impl Default for OptionsExperimentConfig {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            strike: 100.0,
            horizon: 1.0,
            alpha: 0.2,
            beta: [0.0, 0.0],
            sigmas: vec![
                [[4.0, -2.0], [-2.0, 4.0]],
                [[4.0, -1.0], [-1.0, 1.0]],
                [[4.0, 2.0], [2.0, 4.0]],
                [[4.0, 1.0], [1.0, 4.0]],
            ],
            value_nodes: 1001,
            value_half_width: 3.3,
            pipeline: PipelineConfig::default(),
            n_paths: 10_000,
            seed: 0,
            drift_lookup: DriftLookup::Nearest,
            slice_time: 0.5,
            initial_vol: 0.2,
            kde_points: 201,
            kde_2d_points: 100,
            profit_bins: 100,
            dispersion_seeds: 10,
        }
    }
}

impl OptionsExperimentConfig {
    /// μ = log 100 − σ²/2, so that E[ṽ_s] = 100.
    pub fn mu(&self) -> f64 {
        100f64.ln() - 0.5 * self.sigma * self.sigma
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.strike > 0.0 && self.horizon > 0.0 && self.alpha >= 0.0) {
            return Err(Error::invalid("options experiment needs σ, K, T > 0 and α ≥ 0"));
        }
        if !(self.slice_time > 0.0 && self.slice_time < self.horizon) {
            return Err(Error::invalid(format!(
                "slice time {} must lie strictly inside (0, {})",
                self.slice_time, self.horizon
            )));
        }
        if self.sigmas.is_empty() {
            return Err(Error::invalid("no noise covariances configured"));
        }
        for s in &self.sigmas {
            linalg::spd_inverse(&sigma_matrix(s), "noise covariance Σ")?;
        }
        Ok(())
    }
}

pub fn sigma_matrix(s: &[[f64; 2]; 2]) -> Matrix {
    Matrix::from_row_slice(2, 2, &[s[0][0], s[0][1], s[1][0], s[1][1]])
}

pub fn sigma_label(s: &[[f64; 2]; 2]) -> String {
    format!("[[{},{}],[{},{}]]", s[0][0], s[0][1], s[1][0], s[1][1])
}

fn sigma_tag(s: &[[f64; 2]; 2]) -> String {
    let f = |x: f64| if x < 0.0 { format!("m{}", -x) } else { format!("{x}") };
    format!("sigma_{}_{}_{}", f(s[0][0]), f(s[0][1]), f(s[1][1]))
}

/// Largest jump of the map between grid neighbours over the median jump.
pub fn map_jump_ratio(map: &TransportMap) -> f64 {
    let Some(grid) = map.grid() else {
        return f64::NAN;
    };
    let d = grid.dim();
    let mut jumps = Vec::new();
    for i in 0..grid.len() {
        let idx = grid.unravel(i);
        for k in 0..d {
            if idx[k] + 1 < grid.axis(k).len {
                let j = i + grid.stride(k);
                let (a, b) = (map.image(i), map.image(j));
                jumps.push((0..d).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt());
            }
        }
    }
    if jumps.is_empty() {
        return f64::NAN;
    }
    let max = jumps.iter().cloned().fold(0.0, f64::max);
    jumps.sort_by(f64::total_cmp);
    let median = jumps[jumps.len() / 2];
    if median > 0.0 {
        max / median
    } else {
        f64::INFINITY
    }
}

/// Observations at the slice date, one per path with a valid implied vol.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceObservations {
    pub path: Vec<usize>,
    pub risk_premium: Vec<f64>,
    pub delta_iv: Vec<f64>,
    pub stock_return: Vec<f64>,
    /// Paths whose option price left the Black–Scholes bounds.
    pub iv_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bimodality {
    pub modes: Vec<f64>,
    /// Lowest density between the two highest modes.
    pub trough: Option<f64>,
    pub bimodal: bool,
    pub trough_near_strike: bool,
}

/// Conditional SDF means E_P[M | ṽ_s ∈ A] over the tails |ṽ_s − K| > 30
/// and the shoulder |ṽ_s − K| < 10.
///
/// Physical paths rarely reach the tails, so the primary estimate is
/// Q(A)/P(A) from risk-neutral paths, with P(A) the e^{αw}-weighted share of
/// paths in A. Direct means over the physical sample are kept alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdfComparison {
    pub tail_mean: f64,
    pub shoulder_mean: f64,
    /// Risk-neutral paths in each region.
    pub tail_count: usize,
    pub shoulder_count: usize,
    /// Kish effective sample size of the e^{αw} weights.
    pub effective_paths: f64,
    pub physical_tail_mean: Option<f64>,
    pub physical_shoulder_mean: Option<f64>,
    pub physical_tail_count: usize,
    pub physical_shoulder_count: usize,
    pub tail_exceeds_shoulder: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub seeds: Vec<u64>,
    pub univariate: Vec<f64>,
    pub bivariate_iv: Vec<f64>,
    pub bivariate_return: Vec<f64>,
    pub univariate_sd: f64,
    pub bivariate_iv_sd: f64,
    pub bivariate_return_sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionsCaseReport {
    pub sigma: [[f64; 2]; 2],
    pub label: String,
    pub ot_cost: f64,
    pub map_jump_ratio: f64,
    pub curl: f64,
    pub initial_price: [f64; 2],
    pub initial_iv: f64,
    pub heat_residual: f64,
    pub pde_residual: f64,
    pub univariate: RegressionResult,
    pub bivariate: RegressionResult,
    /// corr(Δiv, stock return) among the regression observations.
    pub regressor_correlation: f64,
    pub iv_failures: usize,
    pub terminal_y_correlation: f64,
    pub mean_y_end: [f64; 2],
    pub bimodality: Bimodality,
    pub sdf: SdfComparison,
    pub clamped_fraction: f64,
    pub mean_dealer_wealth: f64,
    pub dispersion: Option<Dispersion>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionsReport {
    pub cases: Vec<OptionsCaseReport>,
    pub table: String,
    pub checks: Vec<(String, bool)>,
    pub pass: bool,
}

fn regression_observations(
    batch: &SimBatch,
    field: &SpaceTimeField,
    phi: &PhiField,
    cfg: &OptionsExperimentConfig,
) -> Result<SliceObservations> {
    let d = 2;
    let k = ((cfg.slice_time - batch.times[0]) / batch.dt).round() as usize;
    if (batch.times[k] - cfg.slice_time).abs() > 1e-9 {
        return Err(Error::invalid("slice time is not on the simulation grid"));
    }
    let tau = cfg.horizon - cfg.slice_time;
    let sigma = field.sigma();
    let rows: Vec<Option<(usize, f64, f64, f64)>> = batch
        .paths
        .par_iter()
        .enumerate()
        .map(|(id, path)| {
            if path.y.len() < (k + 1) * d {
                return Err(Error::invalid("simulation did not keep trajectories"));
            }
            let y = &path.y[k * d..(k + 1) * d];
            let p = &path.p[k * d..(k + 1) * d];
            let p0 = &path.p[..d];
            let Ok(iv) = implied_vol(p[1], p[0], cfg.strike, tau) else {
                return Ok(None);
            };
            let (premium, _) = risk::risk_premium(phi, field, sigma, cfg.slice_time, y);
            Ok(Some((id, premium[0] / p[0], iv - cfg.initial_vol, (p[0] / p0[0]).ln())))
        })
        .collect::<Result<_>>()?;
    let mut obs = SliceObservations::default();
    for r in rows {
        match r {
            Some((id, rp, div, ret)) => {
                obs.path.push(id);
                obs.risk_premium.push(rp);
                obs.delta_iv.push(div);
                obs.stock_return.push(ret);
            }
            None => obs.iv_failures += 1,
        }
    }
    Ok(obs)
}

fn regressions(obs: &SliceObservations) -> Result<(RegressionResult, RegressionResult)> {
    let ones = vec![1.0; obs.risk_premium.len()];
    let uni = stats::ols(
        &obs.risk_premium,
        &[ones.clone(), obs.delta_iv.clone()],
        &[INTERCEPT, DELTA_IV],
    )?;
    let bi = stats::ols(
        &obs.risk_premium,
        &[ones, obs.delta_iv.clone(), obs.stock_return.clone()],
        &[INTERCEPT, DELTA_IV, STOCK_RETURN],
    )?;
    Ok((uni, bi))
}

fn bimodality(values: &[f64], strike: f64, points: usize) -> Result<(Bimodality, Vec<f64>, Vec<f64>)> {
    let kde = stats::kde_1d(values, None)?;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1).max(1) as f64)
        .collect();
    let dens = kde.evaluate(&x);
    let peaks = stats::local_maxima(&dens);
    let modes: Vec<f64> = peaks.iter().map(|&i| x[i]).collect();
    let mut top = peaks.clone();
    top.sort_by(|&a, &b| dens[b].total_cmp(&dens[a]));
    let trough = if top.len() >= 2 {
        let (a, b) = (top[0].min(top[1]), top[0].max(top[1]));
        let j = (a..=b).min_by(|&i, &j| dens[i].total_cmp(&dens[j])).unwrap();
        Some(x[j])
    } else {
        None
    };
    let bimodal = top.len() >= 2;
    let trough_near_strike = trough.is_some_and(|t| (t - strike).abs() <= 0.15 * strike);
    Ok((
        Bimodality {
            modes,
            trough,
            bimodal,
            trough_near_strike,
        },
        x,
        dens,
    ))
}

fn region(v: f64, strike: f64) -> Option<bool> {
    let gap = (v - strike).abs();
    if gap > 30.0 {
        Some(true)
    } else if gap < 10.0 {
        Some(false)
    } else {
        None
    }
}

fn sdf_comparison(
    physical_values: &[f64],
    physical_sdf: &[f64],
    rn_values: &[f64],
    rn_wealth: &[f64],
    alpha: f64,
    strike: f64,
) -> SdfComparison {
    let (mut ts, mut tn, mut ss, mut sn) = (0.0, 0usize, 0.0, 0usize);
    for (v, m) in physical_values.iter().zip(physical_sdf) {
        match region(*v, strike) {
            Some(true) => {
                ts += m;
                tn += 1;
            }
            Some(false) => {
                ss += m;
                sn += 1;
            }
            None => {}
        }
    }
    let shift = rn_wealth.iter().map(|w| alpha * w).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = rn_wealth.iter().map(|w| (alpha * w - shift).exp()).collect();
    let total: f64 = weights.iter().sum();
    let squares: f64 = weights.iter().map(|w| w * w).sum();
    let n = rn_values.len() as f64;
    let (mut tq, mut tp, mut sq, mut sp) = (0usize, 0.0, 0usize, 0.0);
    for (v, w) in rn_values.iter().zip(&weights) {
        match region(*v, strike) {
            Some(true) => {
                tq += 1;
                tp += w / total;
            }
            Some(false) => {
                sq += 1;
                sp += w / total;
            }
            None => {}
        }
    }
    let ratio = |q: usize, p: f64| if p > 0.0 { q as f64 / n / p } else { f64::NAN };
    let tail_mean = ratio(tq, tp);
    let shoulder_mean = ratio(sq, sp);
    SdfComparison {
        tail_mean,
        shoulder_mean,
        tail_count: tq,
        shoulder_count: sq,
        effective_paths: total * total / squares,
        physical_tail_mean: (tn > 0).then(|| ts / tn as f64),
        physical_shoulder_mean: (sn > 0).then(|| ss / sn as f64),
        physical_tail_count: tn,
        physical_shoulder_count: sn,
        tail_exceeds_shoulder: tail_mean > shoulder_mean,
    }
}

fn simulate_case(
    field: &SpaceTimeField,
    phi: &PhiField,
    cfg: &OptionsExperimentConfig,
    seed: u64,
    mode: SimMode,
) -> Result<SimBatch> {
    let model = FieldModel::new(field, Some(phi), cfg.drift_lookup)?;
    let sim_cfg = SimConfig {
        n_paths: cfg.n_paths,
        dt: cfg.pipeline.dt,
        seed,
        mode,
        keep_paths: mode == SimMode::Physical,
        ..SimConfig::default()
    };
    sim::simulate(&model, &cfg.beta, &sim_cfg)
}

/// Solves, simulates and summarizes one noise covariance.
pub fn run_options_case(
    cfg: &OptionsExperimentConfig,
    sigma_rows: &[[f64; 2]; 2],
    out: Option<&OutputDir>,
) -> Result<OptionsCaseReport> {
    let start = Instant::now();
    let sigma = sigma_matrix(sigma_rows);
    let target = transport::call_payoff_marginal(cfg.mu(), cfg.sigma, cfg.value_half_width, cfg.value_nodes, cfg.strike)
        .stage("value marginal")?;
    let run = run_pipeline(&sigma, cfg.horizon, &target, cfg.alpha, &cfg.beta, &cfg.pipeline)?;
    let Pipeline {
        coupling,
        map,
        potential,
        field,
        phi,
        ..
    } = &run;

    let mut p0 = [0.0; 2];
    field.price_at(0, &[0.0, 0.0], &mut p0);
    let initial_iv = implied_vol(p0[1], p0[0], cfg.strike, cfg.horizon).unwrap_or(f64::NAN);

    let batch = simulate_case(field, phi, cfg, cfg.seed, SimMode::Physical).stage("physical simulation")?;
    let rn = simulate_case(field, phi, cfg, cfg.seed.wrapping_add(1 << 32), SimMode::RiskNeutral)
        .stage("risk-neutral simulation")?;
    let obs = regression_observations(&batch, field, phi, cfg).stage("slice observations")?;
    let (univariate, bivariate) = regressions(&obs).stage("regressions")?;

    let ye = batch.y_end();
    let ys: Vec<f64> = ye.chunks(2).map(|r| r[0]).collect();
    let yo: Vec<f64> = ye.chunks(2).map(|r| r[1]).collect();
    let pe = batch.p_end();
    let vs: Vec<f64> = pe.chunks(2).map(|r| r[0]).collect();
    let wealth: Vec<f64> = batch.paths.iter().map(|p| p.dealer_wealth).collect();
    let sdf = risk::sdf_sample(&wealth, cfg.alpha);
    let (bimodality, kde_x, kde_y) = bimodality(&vs, cfg.strike, cfg.kde_points)?;
    let summary = batch.summary();

    let dispersion = if cfg.dispersion_seeds > 0 {
        Some(seed_dispersion(field, phi, cfg)?)
    } else {
        None
    };

    if let Some(out) = out {
        let tag = sigma_tag(sigma_rows);
        write_field_slice(out, &tag, field, phi, cfg)?;
        write_paths(out, &tag, &batch, &obs, &sdf)?;
        let mut w = out.csv("figures_data", &format!("fig2_sdf_{tag}.csv"))?;
        writeln!(w, "v_s,sdf")?;
        for (v, m) in vs.iter().zip(&sdf) {
            writeln!(w, "{v},{m}")?;
        }
        w.flush()?;
        let mut w = out.csv("figures_data", &format!("fig2_density_{tag}.csv"))?;
        writeln!(w, "v_s,physical_kde,risk_neutral")?;
        for (x, f) in kde_x.iter().zip(&kde_y) {
            writeln!(w, "{x},{f},{}", lognormal_density(*x, cfg.mu(), cfg.sigma))?;
        }
        w.flush()?;
        let kde2 = stats::kde_2d(&ys, &yo, cfg.kde_2d_points, cfg.kde_2d_points)?;
        let mut w = out.csv("figures_data", &format!("fig3_imbalance_kde_{tag}.csv"))?;
        writeln!(w, "y_s,y_o,density")?;
        for (i, x) in kde2.x.iter().enumerate() {
            for (j, y) in kde2.y.iter().enumerate() {
                writeln!(w, "{x},{y},{}", kde2.density[i * kde2.y.len() + j])?;
            }
        }
        w.flush()?;
        let pts: Vec<(f64, f64)> = ys.iter().cloned().zip(yo.iter().cloned()).collect();
        let bins = stats::binned_mean(&pts, &wealth, cfg.profit_bins, cfg.profit_bins)?;
        let mut w = out.csv("figures_data", &format!("fig4_dealer_profit_{tag}.csv"))?;
        writeln!(w, "y_s_lo,y_s_hi,y_o_lo,y_o_hi,count,mean_wealth")?;
        for i in 0..cfg.profit_bins {
            for j in 0..cfg.profit_bins {
                let b = i * cfg.profit_bins + j;
                let mean = bins.means[b].map(|m| m.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{mean}",
                    bins.x_edges[i],
                    bins.x_edges[i + 1],
                    bins.y_edges[j],
                    bins.y_edges[j + 1],
                    bins.counts[b]
                )?;
            }
        }
        w.flush()?;
        let mut w = out.csv("fields", &format!("potential_{tag}.csv"))?;
        potential.write_csv(&mut w)?;
        w.flush()?;
    }

    Ok(OptionsCaseReport {
        sigma: *sigma_rows,
        label: sigma_label(sigma_rows),
        ot_cost: coupling.cost(),
        map_jump_ratio: map_jump_ratio(map),
        curl: potential.diagnostics().curl_residual,
        initial_price: p0,
        initial_iv,
        heat_residual: heat::heat_residual(field, &sigma).max_relative,
        pde_residual: risk::pde_residual(phi, field, &sigma).max_relative,
        regressor_correlation: stats::correlation(&obs.delta_iv, &obs.stock_return),
        univariate,
        bivariate,
        iv_failures: obs.iv_failures,
        terminal_y_correlation: stats::correlation(&ys, &yo),
        mean_y_end: [summary.mean_y_end[0].mean, summary.mean_y_end[1].mean],
        bimodality,
        sdf: sdf_comparison(
            &vs,
            &sdf,
            &rn.paths.iter().map(|p| p.p_end(2)[0]).collect::<Vec<_>>(),
            &rn.paths.iter().map(|p| p.dealer_wealth).collect::<Vec<_>>(),
            cfg.alpha,
            cfg.strike,
        ),
        clamped_fraction: summary.clamped_fraction,
        mean_dealer_wealth: summary.dealer_wealth.mean,
        dispersion,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn lognormal_density(v: f64, mu: f64, sigma: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    norm_pdf((v.ln() - mu) / sigma) / (v * sigma)
}

/// Regression coefficients across `dispersion_seeds` further seeds.
pub fn seed_dispersion(field: &SpaceTimeField, phi: &PhiField, cfg: &OptionsExperimentConfig) -> Result<Dispersion> {
    let seeds: Vec<u64> = (1..=cfg.dispersion_seeds as u64).map(|s| cfg.seed + s).collect();
    let mut out = Dispersion {
        seeds: seeds.clone(),
        univariate: Vec::new(),
        bivariate_iv: Vec::new(),
        bivariate_return: Vec::new(),
        univariate_sd: 0.0,
        bivariate_iv_sd: 0.0,
        bivariate_return_sd: 0.0,
    };
    for seed in seeds {
        let batch = simulate_case(field, phi, cfg, seed, SimMode::Physical)?;
        let obs = regression_observations(&batch, field, phi, cfg)?;
        let (uni, bi) = regressions(&obs)?;
        out.univariate.push(uni.coefficient(DELTA_IV).unwrap_or(f64::NAN));
        out.bivariate_iv.push(bi.coefficient(DELTA_IV).unwrap_or(f64::NAN));
        out.bivariate_return.push(bi.coefficient(STOCK_RETURN).unwrap_or(f64::NAN));
    }
    let sd = |x: &[f64]| stats::mean_se(x).1 * (x.len() as f64).sqrt();
    out.univariate_sd = sd(&out.univariate);
    out.bivariate_iv_sd = sd(&out.bivariate_iv);
    out.bivariate_return_sd = sd(&out.bivariate_return);
    Ok(out)
}

/// Midpoint panels: prices, relative lambdas, bid-ask rate, implied vol and
/// risk-premium rates on every grid node.
fn write_field_slice(
    out: &OutputDir,
    tag: &str,
    field: &SpaceTimeField,
    phi: &PhiField,
    cfg: &OptionsExperimentConfig,
) -> Result<()> {
    let k = field.slice_index(cfg.slice_time);
    let t = field.times()[k];
    let grid = field.grid();
    let sigma = field.sigma();
    let rate = field.bidask_slice(k);
    let tau = cfg.horizon - t;
    let mut w = out.csv("figures_data", &format!("fig1_panels_{tag}.csv"))?;
    writeln!(
        w,
        "y_s,y_o,price_s,price_o,rel_lambda_s,rel_lambda_o,bidask_rate,implied_vol,premium_s,premium_o"
    )?;
    let price = field.price(k);
    let lam = field.lambda(k);
    let grad = phi.grad(k);
    for i in 0..grid.len() {
        let y = grid.coords(i);
        let (ps, po) = (price[2 * i], price[2 * i + 1]);
        let l = &lam[4 * i..4 * i + 4];
        let g = &grad[2 * i..2 * i + 2];
        let sg = [
            sigma[(0, 0)] * g[0] + sigma[(0, 1)] * g[1],
            sigma[(1, 0)] * g[0] + sigma[(1, 1)] * g[1],
        ];
        let prem = [l[0] * sg[0] + l[1] * sg[1], l[2] * sg[0] + l[3] * sg[1]];
        let iv = implied_vol(po, ps, cfg.strike, tau).map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{ps},{po},{},{},{},{iv},{},{}",
            y[0],
            y[1],
            l[0] / ps,
            l[3] / po,
            rate[i],
            prem[0] / ps,
            prem[1] / po
        )?;
    }
    w.flush()?;
    let mut w = out.csv("fields", &format!("field_{tag}_t{t}.csv"))?;
    field.write_slice_csv(k, &mut w)?;
    w.flush()?;
    let mut w = out.csv("fields", &format!("phi_{tag}_t{t}.csv"))?;
    phi.write_slice_csv(k, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_paths(out: &OutputDir, tag: &str, batch: &SimBatch, obs: &SliceObservations, sdf: &[f64]) -> Result<()> {
    let mut slice = vec![None; batch.paths.len()];
    for (n, &id) in obs.path.iter().enumerate() {
        slice[id] = Some(n);
    }
    let mut w = out.csv("paths", &format!("options_{tag}.csv"))?;
    writeln!(
        w,
        "path,y_s_T,y_o_T,p_s_T,p_o_T,dealer_wealth,sdf,risk_premium_mid,delta_iv_mid,stock_return_mid"
    )?;
    for (id, path) in batch.paths.iter().enumerate() {
        let y = path.y_end(2);
        let p = path.p_end(2);
        let mid = match slice[id] {
            Some(n) => format!("{},{},{}", obs.risk_premium[n], obs.delta_iv[n], obs.stock_return[n]),
            None => ",,".to_string(),
        };
        writeln!(
            w,
            "{id},{},{},{},{},{},{},{mid}",
            y[0], y[1], p[0], p[1], path.dealer_wealth, sdf[id]
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Pass/fail of the regression and structure checks over the cases.
pub fn options_checks(cases: &[OptionsCaseReport]) -> Vec<(String, bool)> {
    let mut checks = Vec::new();
    let coef = |r: &RegressionResult, n: &str| r.coefficient(n).unwrap_or(f64::NAN);
    checks.push((
        "univariate Δiv coefficient positive for every Σ".to_string(),
        cases.iter().all(|c| coef(&c.univariate, DELTA_IV) > 0.0),
    ));
    if let Some(c) = cases.iter().find(|c| c.sigma == [[4.0, -2.0], [-2.0, 4.0]]) {
        let u = coef(&c.univariate, DELTA_IV);
        let r = coef(&c.bivariate, STOCK_RETURN);
        checks.push((
            format!("Σ={}: univariate Δiv {u:.3} in [0.30, 0.60]", c.label),
            (0.30..=0.60).contains(&u),
        ));
        checks.push((
            format!("Σ={}: bivariate stock return {r:.3} in [-2.40, -2.00]", c.label),
            (-2.40..=-2.00).contains(&r),
        ));
    }
    checks.push((
        "bivariate Δiv coefficient positive iff noise correlation negative".to_string(),
        cases
            .iter()
            .all(|c| (coef(&c.bivariate, DELTA_IV) > 0.0) == (c.sigma[0][1] < 0.0)),
    ));
    checks.push((
        "terminal imbalance correlation negative for every Σ".to_string(),
        cases.iter().all(|c| c.terminal_y_correlation < 0.0),
    ));
    checks.push((
        "physical stock-value density bimodal with trough near the strike".to_string(),
        cases
            .iter()
            .all(|c| c.bimodality.bimodal && c.bimodality.trough_near_strike),
    ));
    checks.push((
        "SDF tail mean exceeds shoulder mean".to_string(),
        cases.iter().all(|c| c.sdf.tail_exceeds_shoulder),
    ));
    checks
}

pub fn table1(cases: &[OptionsCaseReport]) -> String {
    let mut headers = Vec::new();
    let mut columns = Vec::new();
    for (n, c) in cases.iter().enumerate() {
        headers.push(format!("({}) {}", 2 * n + 1, c.label));
        headers.push(format!("({})", 2 * n + 2));
        columns.push(c.univariate.clone());
        columns.push(c.bivariate.clone());
    }
    stats::format_table(
        "Regression of the stock risk premium on implied volatility at the midpoint",
        &headers,
        &columns,
        &[INTERCEPT, DELTA_IV, STOCK_RETURN],
    )
}

fn write_table(out: &OutputDir, cases: &[OptionsCaseReport]) -> Result<()> {
    let mut w = out.csv("tables", "table1.csv")?;
    writeln!(w, "column,sigma,regressor,coefficient,standard_error,ci95_low,ci95_high,r_squared,n_obs")?;
    for (n, c) in cases.iter().enumerate() {
        for (m, r) in [&c.univariate, &c.bivariate].into_iter().enumerate() {
            for j in 0..r.names.len() {
                writeln!(
                    w,
                    "{},\"{}\",{},{},{},{},{},{},{}",
                    2 * n + m + 1,
                    c.label,
                    r.names[j],
                    r.coefficients[j],
                    r.standard_errors[j],
                    r.ci95_low[j],
                    r.ci95_high[j],
                    r.r_squared,
                    r.n_obs
                )?;
            }
        }
    }
    w.flush()?;
    out.text("tables", "table1.txt", &table1(cases))
}

pub fn run_options_experiment(cfg: &OptionsExperimentConfig, out: Option<&OutputDir>) -> Result<OptionsReport> {
    cfg.validate()?;
    let mut cases = Vec::new();
    for s in &cfg.sigmas {
        cases.push(run_options_case(cfg, s, out)?);
    }
    if let Some(out) = out {
        write_table(out, &cases)?;
    }
    let checks = options_checks(&cases);
    let pass = checks.iter().all(|c| c.1);
    Ok(OptionsReport {
        table: table1(&cases),
        cases,
        checks,
        pass,
    })
}
