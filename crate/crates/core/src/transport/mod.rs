//! Discrete marginals and exact quadratic-cost optimal transport.

mod measure;
mod monotone;
mod simplex;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::potential::{self, BrenierPotential};

pub use measure::{
    build_gaussian_marginal, build_value_marginal, call_payoff_marginal, lognormal_nodes, DiscreteMeasure, GridSpec,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Monotone coupling in one dimension, network simplex otherwise.
    #[default]
    Auto,
    NetworkSimplex,
    Monotone,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtOptions {
    pub solver: Solver,
    /// Pivot budget for the network simplex; `None` scales with the instance.
    pub max_pivots: Option<usize>,
}

impl Default for OtOptions {
    fn default() -> Self {
        Self {
            solver: Solver::Auto,
            max_pivots: None,
        }
    }
}

/// Optimal coupling with its LP multipliers.
#[derive(Clone, Debug)]
pub struct Coupling {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    entries: Vec<(usize, usize, f64)>,
    cost: f64,
    source_duals: Vec<f64>,
    target_duals: Vec<f64>,
    pivots: usize,
}

fn sqdist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Coupling {
    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    /// Nonzero entries (source index, target index, mass), sorted by source.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Transported quadratic cost Σ π_jk ‖x_j − y_k‖².
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn pivots(&self) -> usize {
        self.pivots
    }

    pub fn source_duals(&self) -> &[f64] {
        &self.source_duals
    }

    pub fn target_duals(&self) -> &[f64] {
        &self.target_duals
    }

    /// Dual objective Σ a_j f_j + Σ b_k g_k of the LP multipliers.
    pub fn dual_value(&self) -> f64 {
        self.source.expect(&self.source_duals) + self.target.expect(&self.target_duals)
    }

    /// Largest violation of f_j + g_k ≤ ‖x_j − y_k‖² over all arcs.
    pub fn max_dual_violation(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for j in 0..self.source.len() {
            let x = self.source.point(j);
            let f = self.source_duals[j];
            for k in 0..self.target.len() {
                let v = f + self.target_duals[k] - sqdist(x, self.target.point(k));
                worst = worst.max(v);
            }
        }
        worst
    }

    /// Largest absolute deviation of row and column sums from the marginals.
    pub fn marginal_residual(&self) -> f64 {
        let mut rows = vec![0.0; self.source.len()];
        let mut cols = vec![0.0; self.target.len()];
        for &(j, k, p) in &self.entries {
            rows[j] += p;
            cols[k] += p;
        }
        let r = rows
            .iter()
            .zip(self.source.weights())
            .map(|(s, w)| (s - w).abs())
            .fold(0.0, f64::max);
        let c = cols
            .iter()
            .zip(self.target.weights())
            .map(|(s, w)| (s - w).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    /// Σ π_jk x_j·y_k, the value of the coupling in the correlation form.
    pub fn correlation(&self) -> f64 {
        self.entries
            .iter()
            .map(|&(j, k, p)| p * dot(self.source.point(j), self.target.point(k)))
            .sum()
    }

    /// Sparse triplets, one row per nonzero entry.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "j,k,mass")?;
        for &(j, k, p) in &self.entries {
            writeln!(out, "{j},{k},{p}")?;
        }
        Ok(())
    }
}

/// Exact minimizer of Σ π_jk ‖x_j − y_k‖² over couplings of `source` and `target`.
pub fn solve_quadratic_ot(source: &DiscreteMeasure, target: &DiscreteMeasure) -> Result<Coupling> {
    solve_quadratic_ot_with(source, target, &OtOptions::default())
}

pub fn solve_quadratic_ot_with(source: &DiscreteMeasure, target: &DiscreteMeasure, opts: &OtOptions) -> Result<Coupling> {
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            found: target.dim(),
        });
    }
    let dim = source.dim();
    let use_monotone = match opts.solver {
        Solver::Auto => dim == 1,
        Solver::Monotone if dim != 1 => {
            return Err(Error::invalid("the monotone solver is one-dimensional"));
        }
        Solver::Monotone => true,
        Solver::NetworkSimplex => false,
    };
    let sol = if use_monotone {
        monotone::solve(source.points(), source.weights(), target.points(), target.weights())
    } else {
        let budget = opts
            .max_pivots
            .unwrap_or_else(|| 1_000_000 + 2_000 * (source.len() + target.len()));
        simplex::solve(
            dim,
            source.points(),
            source.weights(),
            target.points(),
            target.weights(),
            budget,
        )?
    };
    let cost = sol
        .flows
        .iter()
        .map(|&(j, k, p)| p * sqdist(source.point(j), target.point(k)))
        .sum();
    Ok(Coupling {
        source: source.clone(),
        target: target.clone(),
        entries: sol.flows,
        cost,
        source_duals: sol.f,
        target_duals: sol.g,
        pivots: sol.pivots,
    })
}

/// Barycentric projection of a coupling onto its source points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportMap {
    dim: usize,
    grid_points: Vec<f64>,
    images: Vec<f64>,
    defined: Vec<bool>,
    grid: Option<Grid>,
}

impl TransportMap {
    /// Builds a map directly from images at the nodes of a grid.
    pub fn on_grid(grid: Grid, images: Vec<f64>) -> Result<Self> {
        let dim = grid.dim();
        if images.len() != grid.len() * dim {
            return Err(Error::invalid("one image per grid node is required"));
        }
        Ok(Self {
            dim,
            grid_points: grid.points(),
            defined: vec![true; grid.len()],
            images,
            grid: Some(grid),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.defined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defined.is_empty()
    }

    pub fn grid(&self) -> Option<&Grid> {
        self.grid.as_ref()
    }

    pub fn grid_point(&self, i: usize) -> &[f64] {
        &self.grid_points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i * self.dim..(i + 1) * self.dim]
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    /// False where the source row carried no mass and the image is undefined.
    pub fn is_defined(&self, i: usize) -> bool {
        self.defined[i]
    }

    pub fn undefined_count(&self) -> usize {
        self.defined.iter().filter(|d| !**d).count()
    }

    /// Smallest value of (T(a)−T(b))·(a−b) over `pairs` pseudo-random pairs,
    /// divided by the data scale max‖a−b‖·max‖T(a)−T(b)‖. Negative values
    /// beyond rounding indicate a non-monotone map.
    pub fn monotonicity_defect(&self, pairs: usize, seed: u64) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        let mut dx_max: f64 = 0.0;
        let mut dt_max: f64 = 0.0;
        for _ in 0..pairs {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b || !self.defined[a] || !self.defined[b] {
                continue;
            }
            let dx: Vec<f64> = self.grid_point(a).iter().zip(self.grid_point(b)).map(|(p, q)| p - q).collect();
            let dt: Vec<f64> = self.image(a).iter().zip(self.image(b)).map(|(p, q)| p - q).collect();
            dx_max = dx_max.max(dot(&dx, &dx).sqrt());
            dt_max = dt_max.max(dot(&dt, &dt).sqrt());
            worst = worst.min(dot(&dx, &dt));
        }
        let scale = (dx_max * dt_max).max(f64::MIN_POSITIVE);
        if worst.is_finite() {
            worst / scale
        } else {
            0.0
        }
    }

    /// One row per source point: coordinates then image components.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header: Vec<String> = (0..self.dim).map(|k| format!("y{k}")).collect();
        header.extend((0..self.dim).map(|k| format!("map{k}")));
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .grid_point(i)
                .iter()
                .chain(self.image(i))
                .map(|x| x.to_string())
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Barycentric projection: each source point maps to the mass-weighted
/// average of the targets in its coupling row.
pub fn extract_map(coupling: &Coupling) -> TransportMap {
    let src = &coupling.source;
    let dim = src.dim();
    let n = src.len();
    let mut images = vec![0.0; n * dim];
    let mut mass = vec![0.0; n];
    for &(j, k, p) in &coupling.entries {
        mass[j] += p;
        for (c, y) in coupling.target.point(k).iter().enumerate() {
            images[j * dim + c] += p * y;
        }
    }
    let mut defined = vec![true; n];
    for j in 0..n {
        if mass[j] > 0.0 {
            for c in 0..dim {
                images[j * dim + c] /= mass[j];
            }
        } else {
            defined[j] = false;
            for c in 0..dim {
                images[j * dim + c] = f64::NAN;
            }
        }
    }
    TransportMap {
        dim,
        grid_points: src.points().to_vec(),
        images,
        defined,
        grid: src.grid().cloned(),
    }
}

/// Wasserstein-2 distance between two discrete measures.
pub fn wasserstein2(source: &DiscreteMeasure, target: &DiscreteMeasure) -> Result<f64> {
    Ok(solve_quadratic_ot(source, target)?.cost().max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// sup over couplings of E[v·y], realized by the optimal coupling.
    pub primal: f64,
    /// E_F[Γ*(ṽ)] from the discrete conjugate of the recovered potential.
    pub dual: f64,
    /// E_G[Γ] + E_F[Γ*]; bounds the primal from above.
    pub conjugate_sum: f64,
    pub gap: f64,
    /// (E‖ṽ‖² + E‖Z_T‖² − W₂²)/2.
    pub identity: f64,
    pub lp_primal: f64,
    pub lp_dual: f64,
    pub lp_gap: f64,
    pub max_dual_violation: f64,
    pub marginal_residual: f64,
    /// Magnitude used to express the gaps relatively: E‖ṽ‖² + E‖Z_T‖².
    pub scale: f64,
    pub boundary_argmax_fraction: f64,
}

pub fn duality_report(coupling: &Coupling, potential: &BrenierPotential) -> DualityReport {
    let target = coupling.target();
    let conj = potential::conjugate(potential, target.points());
    let dual = potential::expected_informed_profit(&conj, target);
    let mean_gamma = coupling.source().expect(potential.values());
    let primal = coupling.correlation();
    let second = target.second_moment() + coupling.source().second_moment();
    let identity = 0.5 * (second - coupling.cost());
    let lp_dual = coupling.dual_value();
    DualityReport {
        primal,
        dual,
        conjugate_sum: mean_gamma + dual,
        gap: mean_gamma + dual - primal,
        identity,
        lp_primal: coupling.cost(),
        lp_dual,
        lp_gap: coupling.cost() - lp_dual,
        max_dual_violation: coupling.max_dual_violation(),
        marginal_residual: coupling.marginal_residual(),
        scale: second,
        boundary_argmax_fraction: conj.boundary_fraction(),
    }
}
