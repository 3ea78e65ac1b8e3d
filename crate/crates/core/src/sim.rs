//! Monte Carlo paths of cumulative orders and prices: risk-neutral Brownian
//! order flow, the informed trader's Brownian bridge, and physical dynamics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianEquilibrium;
use crate::heat::{step_count, trace_product, SpaceTimeField};
use crate::linalg::Matrix;
use crate::risk::PhiField;
use crate::stats;

/// What a simulator needs from an equilibrium.
pub trait PricingModel: Sync {
    fn dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn sigma(&self) -> &Matrix;
    /// Time step of tabulated fields; simulation steps must be multiples of it.
    fn time_step(&self) -> Option<f64> {
        None
    }
    /// H(t,y); returns whether y was clamped to the model's domain.
    fn price(&self, t: f64, y: &[f64], out: &mut [f64]) -> bool;
    /// Γ(t,y).
    fn gamma(&self, t: f64, y: &[f64]) -> f64;
    /// tr(ΣΛ(t,y)).
    fn bidask(&self, t: f64, y: &[f64]) -> f64;
    /// Σ∇φ(t,y); zero for risk-neutral dealers.
    fn physical_drift(&self, t: f64, y: &[f64], out: &mut [f64]) -> bool;
    /// A point ζ with ∇Γ(ζ) = v.
    fn bridge_target(&self, v: &[f64]) -> Result<Vec<f64>>;
    /// A draw of ṽ from its physical distribution, when the model knows it
    /// in closed form.
    fn sample_physical_value(&self, _rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        None
    }
}

/// Analytic normal model: P = m + ΛY and the closed-form physical drift.
pub struct GaussianModel<'a> {
    eq: &'a GaussianEquilibrium,
    chol_s_hat: Matrix,
}

impl<'a> GaussianModel<'a> {
    pub fn new(eq: &'a GaussianEquilibrium) -> Result<Self> {
        let chol_s_hat = eq
            .s_hat()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotSpd {
                what: "physical covariance Ŝ".into(),
                detail: "Cholesky failed".into(),
            })?
            .l();
        Ok(Self { eq, chol_s_hat })
    }
}

impl PricingModel for GaussianModel<'_> {
    fn dim(&self) -> usize {
        self.eq.dim()
    }

    fn horizon(&self) -> f64 {
        self.eq.horizon()
    }

    fn sigma(&self) -> &Matrix {
        self.eq.sigma()
    }

    fn price(&self, _t: f64, y: &[f64], out: &mut [f64]) -> bool {
        out.copy_from_slice(self.eq.price(y).as_slice());
        false
    }

    fn gamma(&self, t: f64, y: &[f64]) -> f64 {
        self.eq.gamma(t, y)
    }

    fn bidask(&self, _t: f64, _y: &[f64]) -> f64 {
        self.eq.bidask_rate()
    }

    fn physical_drift(&self, t: f64, y: &[f64], out: &mut [f64]) -> bool {
        let t = t.min(self.eq.horizon());
        let drift = self.eq.physical_drift(t, y).expect("time clamped into [0, T]");
        out.copy_from_slice(drift.as_slice());
        false
    }

    fn bridge_target(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eq.bridge_target(v).iter().cloned().collect())
    }

    fn sample_physical_value(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        let d = self.dim();
        let xi = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        Some((self.eq.m_hat() + &self.chol_s_hat * xi).iter().cloned().collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftLookup {
    /// ∇φ at the grid node nearest to Y_k.
    #[default]
    Nearest,
    Interpolated,
}

/// Tabulated model from the numerical pipeline.
pub struct FieldModel<'a> {
    field: &'a SpaceTimeField,
    phi: Option<&'a PhiField>,
    lookup: DriftLookup,
}

impl<'a> FieldModel<'a> {
    pub fn new(field: &'a SpaceTimeField, phi: Option<&'a PhiField>, lookup: DriftLookup) -> Result<Self> {
        if let Some(p) = phi {
            if p.grid() != field.grid() || p.steps() != field.steps() {
                return Err(Error::invalid("φ field and price field have different grids or time slices"));
            }
        }
        Ok(Self { field, phi, lookup })
    }

    fn slice(&self, t: f64) -> usize {
        self.field.slice_index(t)
    }
}

impl PricingModel for FieldModel<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn horizon(&self) -> f64 {
        self.field.horizon()
    }

    fn sigma(&self) -> &Matrix {
        self.field.sigma()
    }

    fn time_step(&self) -> Option<f64> {
        Some(self.field.dt())
    }

    fn price(&self, t: f64, y: &[f64], out: &mut [f64]) -> bool {
        self.field.price_at(self.slice(t), y, out)
    }

    fn gamma(&self, t: f64, y: &[f64]) -> f64 {
        self.field.gamma_at(self.slice(t), y).0
    }

    fn bidask(&self, t: f64, y: &[f64]) -> f64 {
        let d = self.dim();
        let mut lam = [0.0; crate::grid::MAX_DIM * crate::grid::MAX_DIM];
        self.field.lambda_at(self.slice(t), y, &mut lam[..d * d]);
        trace_product(self.field.sigma(), &lam[..d * d], d)
    }

    fn physical_drift(&self, t: f64, y: &[f64], out: &mut [f64]) -> bool {
        match self.phi {
            None => {
                out.fill(0.0);
                false
            }
            Some(phi) => {
                let k = self.slice(t);
                match self.lookup {
                    DriftLookup::Nearest => phi.drift_nearest(k, y, out),
                    DriftLookup::Interpolated => phi.drift_interpolated(k, y, out),
                }
            }
        }
    }

    /// Maximizer of v·y − Γ(T,y) over the grid; in one dimension refined by
    /// inverting the interpolated map between neighbouring nodes.
    fn bridge_target(&self, v: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let grid = self.field.grid();
        let last = self.field.steps();
        let gamma = self.field.gamma(last);
        let mut y = vec![0.0; d];
        let mut best = (f64::NEG_INFINITY, 0usize);
        for i in 0..grid.len() {
            grid.coords_into(i, &mut y);
            let val: f64 = (0..d).map(|k| v[k] * y[k]).sum::<f64>() - gamma[i];
            if val > best.0 {
                best = (val, i);
            }
        }
        let node = best.1;
        let idx = grid.unravel(node);
        if (0..d).any(|k| idx[k] == 0 || idx[k] + 1 == grid.axis(k).len) {
            let mut nearest = vec![0.0; d];
            nearest.copy_from_slice(&self.field.price(last)[node * d..(node + 1) * d]);
            return Err(Error::invalid(format!(
                "value {v:?} lies outside the range of the map; nearest attainable value is {nearest:?}"
            )));
        }
        grid.coords_into(node, &mut y);
        if d == 1 {
            let h = self.field.price(last);
            let (lo, hi) = if h[node] <= v[0] { (node, node + 1) } else { (node - 1, node) };
            let (a, b) = (h[lo], h[hi]);
            if b > a && (a..=b).contains(&v[0]) {
                let x0 = grid.axis(0).node(lo);
                y[0] = x0 + (v[0] - a) / (b - a) * grid.axis(0).step;
            }
        }
        Ok(y)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    #[default]
    RiskNeutral,
    Bridge,
    Physical,
}

/// Where bridge paths take the asset value from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeValue {
    /// The same value on every path.
    Fixed(Vec<f64>),
    /// ζ ~ N(0, TΣ) and ṽ = ∇Γ(ζ), the risk-neutral law of ṽ.
    RiskNeutral,
    /// ṽ drawn from the model's physical distribution.
    Physical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub mode: SimMode,
    /// Start time and cumulative orders of every path.
    pub start_time: f64,
    pub start: Option<Vec<f64>>,
    pub bridge_value: Option<BridgeValue>,
    /// Keep full Y and P trajectories on each path.
    pub keep_paths: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            dt: 0.01,
            seed: 0,
            mode: SimMode::RiskNeutral,
            start_time: 0.0,
            start: None,
            bridge_value: None,
            keep_paths: false,
        }
    }
}

/// One realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    /// Y at every step, row-major (steps + 1) × n; only the endpoints unless
    /// trajectories were kept.
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    /// Σ tr(ΣΛ(t_k,Y_k))Δt.
    pub bracket: f64,
    /// Σ ΔP_k·ΔY_k.
    pub realized_bracket: f64,
    /// Per-asset realized quadratic variation Σ (ΔP_k)².
    pub price_qv: Vec<f64>,
    /// Σ (ṽ − P_k)·ΔX_k, informed orders filled at the pre-trade price.
    pub informed_profit: Option<f64>,
    /// Trapezoid value of all orders less the informed part, less half the
    /// bracket; the noise traders pay the spread.
    pub noise_profit: Option<f64>,
    pub dealer_wealth: f64,
    /// Γ*(ṽ) = ṽ·Y_T − Γ(T,Y_T).
    pub informed_transfer: f64,
    pub zeta: Option<Vec<f64>>,
    pub v: Vec<f64>,
    pub clamped: bool,
}

impl SimPath {
    pub fn y_end(&self, d: usize) -> &[f64] {
        &self.y[self.y.len() - d..]
    }

    pub fn y_start(&self, d: usize) -> &[f64] {
        &self.y[..d]
    }

    pub fn p_end(&self, d: usize) -> &[f64] {
        &self.p[self.p.len() - d..]
    }

    pub fn p_start(&self, d: usize) -> &[f64] {
        &self.p[..d]
    }

    /// Informed + noise + dealer − β·ṽ; zero up to discretization.
    pub fn accounting_gap(&self, beta: &[f64]) -> Option<f64> {
        let bv: f64 = beta.iter().zip(&self.v).map(|(b, v)| b * v).sum();
        Some(self.informed_profit? + self.noise_profit? + self.dealer_wealth - bv)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DealerAccounting {
    pub wealth: f64,
    pub bidask_revenue: f64,
    pub informed_transfer: f64,
}

/// Dealer wealth β·ṽ − Γ*(ṽ) + ⟨P,Y⟩_T split into its parts.
pub fn dealer_accounting(path: &SimPath, beta: &[f64]) -> DealerAccounting {
    let bv: f64 = beta.iter().zip(&path.v).map(|(b, v)| b * v).sum();
    DealerAccounting {
        wealth: bv - path.informed_transfer + path.bracket,
        bidask_revenue: path.bracket,
        informed_transfer: path.informed_transfer,
    }
}

#[derive(Clone, Debug)]
pub struct SimBatch {
    pub dim: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    pub beta: Vec<f64>,
    pub config: SimConfig,
    pub paths: Vec<SimPath>,
}

/// Increments over [t_k, t_{k+1}] of Z and of ∫ dZ/(T−s), as (a, c, b) with
/// Var ΔZ = aΣ, Cov = cΣ, Var I = bΣ.
fn bridge_moments(horizon: f64, t0: f64, t1: f64) -> (f64, f64, f64) {
    let (r0, r1) = (horizon - t0, horizon - t1);
    (t1 - t0, (r0 / r1).ln(), 1.0 / r1 - 1.0 / r0)
}

struct Stepper<'m, M: PricingModel + ?Sized> {
    model: &'m M,
    chol: Matrix,
    beta: Vec<f64>,
    times: Vec<f64>,
    cfg: SimConfig,
}

impl<M: PricingModel + ?Sized> Stepper<'_, M> {
    fn normal(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let d = self.model.dim();
        let xi = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        &self.chol * xi
    }

    fn run(&self, id: u64) -> Result<SimPath> {
        let model = self.model;
        let d = model.dim();
        let horizon = model.horizon();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(id);
        let times = &self.times;
        let steps = times.len() - 1;
        let mut y: Vec<f64> = self.cfg.start.clone().unwrap_or_else(|| vec![0.0; d]);
        let mut clamped = false;

        let (v_fixed, zeta) = match self.cfg.mode {
            SimMode::Bridge => {
                let choice = self.cfg.bridge_value.clone().unwrap_or(BridgeValue::RiskNeutral);
                match choice {
                    BridgeValue::Fixed(v) => {
                        let z = model.bridge_target(&v)?;
                        (Some(v), Some(z))
                    }
                    BridgeValue::RiskNeutral => {
                        let w = self.normal(&mut rng) * horizon.sqrt();
                        let z: Vec<f64> = w.iter().cloned().collect();
                        let mut v = vec![0.0; d];
                        clamped |= model.price(horizon, &z, &mut v);
                        (Some(v), Some(z))
                    }
                    BridgeValue::Physical => {
                        let v = model
                            .sample_physical_value(&mut rng)
                            .ok_or_else(|| Error::invalid("model has no closed-form physical distribution"))?;
                        let z = model.bridge_target(&v)?;
                        (Some(v), Some(z))
                    }
                }
            }
            _ => (None, None),
        };

        let keep = self.cfg.keep_paths;
        let mut ys = Vec::with_capacity(if keep { (steps + 1) * d } else { 2 * d });
        let mut ps = Vec::with_capacity(ys.capacity());
        let mut p = vec![0.0; d];
        clamped |= model.price(times[0], &y, &mut p);
        ys.extend_from_slice(&y);
        ps.extend_from_slice(&p);

        let mut bracket = 0.0;
        let mut realized = 0.0;
        let mut qv = vec![0.0; d];
        let mut informed = 0.0;
        let mut total = 0.0;
        let mut drift = vec![0.0; d];
        let mut p_next = vec![0.0; d];
        let mut dy = vec![0.0; d];
        let mut dz = vec![0.0; d];
        let value = v_fixed.clone();
        for k in 0..steps {
            let (t0, t1) = (times[k], times[k + 1]);
            let h = t1 - t0;
            bracket += model.bidask(t0, &y) * h;
            match self.cfg.mode {
                SimMode::RiskNeutral => {
                    let w = self.normal(&mut rng) * h.sqrt();
                    dy.copy_from_slice(w.as_slice());
                    dz.copy_from_slice(w.as_slice());
                }
                SimMode::Physical => {
                    clamped |= model.physical_drift(t0, &y, &mut drift);
                    let w = self.normal(&mut rng) * h.sqrt();
                    for c in 0..d {
                        dy[c] = drift[c] * h + w[c];
                        dz[c] = w[c];
                    }
                }
                SimMode::Bridge => {
                    let z = zeta.as_ref().expect("bridge target set");
                    let w1 = self.normal(&mut rng);
                    if k + 1 == steps {
                        let wz = w1 * h.sqrt();
                        for c in 0..d {
                            dy[c] = z[c] - y[c];
                            dz[c] = wz[c];
                        }
                    } else {
                        let w2 = self.normal(&mut rng);
                        let (a, cv, b) = bridge_moments(horizon, t0, t1);
                        let sa = a.sqrt();
                        let integral = &w1 * (cv / sa) + &w2 * (b - cv * cv / a).max(0.0).sqrt();
                        let (r0, r1) = (horizon - t0, horizon - t1);
                        for c in 0..d {
                            let next = z[c] + (y[c] - z[c]) * r1 / r0 + r1 * integral[c];
                            dy[c] = next - y[c];
                            dz[c] = sa * w1[c];
                        }
                    }
                }
            }
            for c in 0..d {
                y[c] += dy[c];
            }
            if self.cfg.mode == SimMode::Bridge && k + 1 == steps {
                y.copy_from_slice(zeta.as_ref().unwrap());
            }
            clamped |= model.price(t1, &y, &mut p_next);
            if let Some(v) = &value {
                for c in 0..d {
                    let mid = 0.5 * (p[c] + p_next[c]);
                    informed += (v[c] - p[c]) * (dy[c] - dz[c]);
                    total += (v[c] - mid) * dy[c];
                }
            }
            for c in 0..d {
                let dp = p_next[c] - p[c];
                realized += dp * dy[c];
                qv[c] += dp * dp;
            }
            p.copy_from_slice(&p_next);
            if keep {
                ys.extend_from_slice(&y);
                ps.extend_from_slice(&p);
            }
        }
        if !keep {
            ys.extend_from_slice(&y);
            ps.extend_from_slice(&p);
        }
        let v = value.clone().unwrap_or_else(|| p.clone());
        let gamma_t = model.gamma(horizon, &y);
        let transfer: f64 = v.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - gamma_t;
        let bv: f64 = self.beta.iter().zip(&v).map(|(b, x)| b * x).sum();
        let is_bridge = value.is_some();
        Ok(SimPath {
            y: ys,
            p: ps,
            bracket,
            realized_bracket: realized,
            price_qv: qv,
            informed_profit: is_bridge.then_some(informed),
            noise_profit: is_bridge.then_some(total - informed - 0.5 * bracket),
            dealer_wealth: bv - transfer + bracket,
            informed_transfer: transfer,
            zeta,
            v,
            clamped,
        })
    }
}

/// Simulates `cfg.n_paths` independent paths; path i draws from stream i of
/// the seeded generator, so results do not depend on thread count.
pub fn simulate<M: PricingModel + ?Sized>(model: &M, beta: &[f64], cfg: &SimConfig) -> Result<SimBatch> {
    let d = model.dim();
    if beta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: beta.len(),
        });
    }
    if cfg.n_paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    if let Some(s) = &cfg.start {
        if s.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: s.len(),
            });
        }
    }
    let horizon = model.horizon();
    if !(0.0..horizon).contains(&cfg.start_time) {
        return Err(Error::invalid(format!("start time {} outside [0, {horizon})", cfg.start_time)));
    }
    let steps = step_count(horizon - cfg.start_time, cfg.dt)?;
    if let Some(h) = model.time_step() {
        let ratio = cfg.dt / h;
        let start_ratio = cfg.start_time / h;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 || (start_ratio - start_ratio.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "simulation step {} and start {} must be multiples of the field step {h}",
                cfg.dt, cfg.start_time
            )));
        }
    }
    if cfg.mode == SimMode::Bridge && matches!(cfg.bridge_value, Some(BridgeValue::Fixed(ref v)) if v.len() != d) {
        return Err(Error::invalid("fixed bridge value has the wrong dimension"));
    }
    let chol = model
        .sigma()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotSpd {
            what: "noise covariance Σ".into(),
            detail: "Cholesky failed".into(),
        })?
        .l();
    let times: Vec<f64> = (0..=steps).map(|k| cfg.start_time + k as f64 * cfg.dt).collect();
    let stepper = Stepper {
        model,
        chol,
        beta: beta.to_vec(),
        times: times.clone(),
        cfg: cfg.clone(),
    };
    let paths = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| stepper.run(i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimBatch {
        dim: d,
        dt: cfg.dt,
        times,
        beta: beta.to_vec(),
        config: cfg.clone(),
        paths,
    })
}

pub fn simulate_risk_neutral<M: PricingModel + ?Sized>(model: &M, beta: &[f64], cfg: &SimConfig) -> Result<SimBatch> {
    simulate(model, beta, &SimConfig { mode: SimMode::RiskNeutral, ..cfg.clone() })
}

pub fn simulate_bridge<M: PricingModel + ?Sized>(
    model: &M,
    beta: &[f64],
    cfg: &SimConfig,
    value: BridgeValue,
) -> Result<SimBatch> {
    simulate(
        model,
        beta,
        &SimConfig {
            mode: SimMode::Bridge,
            bridge_value: Some(value),
            ..cfg.clone()
        },
    )
}

pub fn simulate_physical<M: PricingModel + ?Sized>(model: &M, beta: &[f64], cfg: &SimConfig) -> Result<SimBatch> {
    simulate(model, beta, &SimConfig { mode: SimMode::Physical, ..cfg.clone() })
}

/// Mean and standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(x: &[f64]) -> Self {
        let (mean, se) = stats::mean_se(x);
        Self { mean, se }
    }

    /// |mean − target| in standard errors.
    pub fn z(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.se
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub mode: SimMode,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub mean_y_end: Vec<Estimate>,
    pub cov_y_end: Vec<Vec<f64>>,
    pub mean_p_start: Vec<f64>,
    pub mean_p_end: Vec<Estimate>,
    pub cov_p_end: Vec<Vec<f64>>,
    pub mean_price_qv: Vec<Estimate>,
    pub bracket: Estimate,
    pub realized_bracket: Estimate,
    pub informed_profit: Option<Estimate>,
    pub noise_profit: Option<Estimate>,
    pub dealer_wealth: Estimate,
    pub informed_transfer: Estimate,
    pub max_accounting_gap: Option<f64>,
    pub max_terminal_gap: Option<f64>,
    pub clamped_fraction: f64,
}

impl SimBatch {
    pub fn y_end(&self) -> Vec<f64> {
        self.paths.iter().flat_map(|p| p.y_end(self.dim).to_vec()).collect()
    }

    pub fn p_end(&self) -> Vec<f64> {
        self.paths.iter().flat_map(|p| p.p_end(self.dim).to_vec()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.paths.iter().flat_map(|p| p.v.clone()).collect()
    }

    fn component(rows: &[f64], d: usize, c: usize) -> Vec<f64> {
        rows.chunks(d).map(|r| r[c]).collect()
    }

    pub fn summary(&self) -> SimSummary {
        let d = self.dim;
        let ye = self.y_end();
        let pe = self.p_end();
        let col = |f: &dyn Fn(&SimPath) -> f64| self.paths.iter().map(f).collect::<Vec<_>>();
        let rows = |m: DMatrix<f64>| crate::linalg::matrix_to_rows(&m);
        let opt = |f: &dyn Fn(&SimPath) -> Option<f64>| -> Option<Estimate> {
            let v: Option<Vec<f64>> = self.paths.iter().map(f).collect();
            v.map(|v| Estimate::of(&v))
        };
        let gaps: Option<Vec<f64>> = self.paths.iter().map(|p| p.accounting_gap(&self.beta)).collect();
        let terminal: Option<Vec<f64>> = self
            .paths
            .iter()
            .map(|p| {
                p.zeta
                    .as_ref()
                    .map(|z| z.iter().zip(p.y_end(d)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            })
            .collect();
        SimSummary {
            mode: self.config.mode,
            n_paths: self.paths.len(),
            dt: self.dt,
            seed: self.config.seed,
            mean_y_end: (0..d).map(|c| Estimate::of(&Self::component(&ye, d, c))).collect(),
            cov_y_end: rows(stats::sample_covariance(&ye, d)),
            mean_p_start: (0..d)
                .map(|c| self.paths.iter().map(|p| p.p_start(d)[c]).sum::<f64>() / self.paths.len() as f64)
                .collect(),
            mean_p_end: (0..d).map(|c| Estimate::of(&Self::component(&pe, d, c))).collect(),
            cov_p_end: rows(stats::sample_covariance(&pe, d)),
            mean_price_qv: (0..d).map(|c| Estimate::of(&col(&|p| p.price_qv[c]))).collect(),
            bracket: Estimate::of(&col(&|p| p.bracket)),
            realized_bracket: Estimate::of(&col(&|p| p.realized_bracket)),
            informed_profit: opt(&|p| p.informed_profit),
            noise_profit: opt(&|p| p.noise_profit),
            dealer_wealth: Estimate::of(&col(&|p| p.dealer_wealth)),
            informed_transfer: Estimate::of(&col(&|p| p.informed_transfer)),
            max_accounting_gap: gaps.map(|g| g.iter().map(|x| x.abs()).fold(0.0, f64::max)),
            max_terminal_gap: terminal.map(|g| g.into_iter().fold(0.0, f64::max)),
            clamped_fraction: self.paths.iter().filter(|p| p.clamped).count() as f64 / self.paths.len() as f64,
        }
    }

    /// Long-format trajectories: path id, t, Y components, P components.
    /// Paths without kept trajectories contribute their endpoints.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim;
        let mut header = vec!["path".to_string(), "t".to_string()];
        header.extend((0..d).map(|c| format!("y{c}")));
        header.extend((0..d).map(|c| format!("p{c}")));
        writeln!(out, "{}", header.join(","))?;
        let last = *self.times.last().unwrap();
        for (id, path) in self.paths.iter().enumerate() {
            let rows = path.y.len() / d;
            for r in 0..rows {
                let t = if rows == self.times.len() {
                    self.times[r]
                } else if r == 0 {
                    self.times[0]
                } else {
                    last
                };
                let mut row = vec![id.to_string(), t.to_string()];
                row.extend(path.y[r * d..(r + 1) * d].iter().map(|x| x.to_string()));
                row.extend(path.p[r * d..(r + 1) * d].iter().map(|x| x.to_string()));
                writeln!(out, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}
