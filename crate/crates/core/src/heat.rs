//! Backward propagation of Γ, the pricing rule H = ∇Γ(t,·) and Kyle's lambda
//! Λ = ∇²Γ(t,·) with a lattice Gaussian transition kernel.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, MAX_DIM};
use crate::linalg::{self, Matrix};
use crate::potential::BrenierPotential;

/// How the stencil treats neighbours that fall outside the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// Ghost nodes filled by least-squares polynomial extrapolation of the
    /// boundary band (linear for gradients, quadratic for Γ and φ).
    #[default]
    Extrapolate,
    /// Out-of-grid stencil mass dropped and the row renormalized.
    Renormalize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelOptions {
    /// Stencil radius in Mahalanobis units of the one-step increment.
    pub truncation: f64,
    /// Minimum grid nodes per one-step standard deviation along each axis.
    pub min_nodes_per_std: f64,
    pub boundary: BoundaryRule,
    /// Nodes in the boundary band used for ghost extrapolation.
    pub extrapolation_band: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            truncation: 6.0,
            min_nodes_per_std: 1.5,
            boundary: BoundaryRule::Extrapolate,
            extrapolation_band: 8,
        }
    }
}

/// Polynomial degree used when extrapolating a field past the grid edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extrapolation {
    Linear,
    Quadratic,
    /// Quadratic, but never above the value at the edge node.
    QuadraticCapped,
}

/// Moment-matched truncated Gaussian stencil for the (0, ΔtΣ) increment.
#[derive(Clone, Debug)]
pub struct TransitionKernel {
    dt: f64,
    sigma: Matrix,
    grid: Grid,
    offsets: Vec<[isize; MAX_DIM]>,
    weights: Vec<f64>,
    radius: [usize; MAX_DIM],
    opts: KernelOptions,
    // Extrapolation weights per degree: [ghost distance − 1][band index].
    ghost_linear: Vec<Vec<f64>>,
    ghost_quadratic: Vec<Vec<f64>>,
}

fn ghost_coefficients(degree: usize, band: usize, reach: usize) -> Vec<Vec<f64>> {
    let cols = degree + 1;
    let v = DMatrix::from_fn(band, cols, |j, p| (j as f64).powi(p as i32));
    let vtv = v.transpose() * &v;
    let inv = vtv.try_inverse().expect("Vandermonde normal matrix is invertible");
    let proj = inv * v.transpose();
    (1..=reach)
        .map(|g| {
            let row = DVector::from_fn(cols, |p, _| (-(g as f64)).powi(p as i32));
            (row.transpose() * &proj).iter().cloned().collect()
        })
        .collect()
}

pub fn build_kernel(sigma: &Matrix, dt: f64, grid: &Grid) -> Result<TransitionKernel> {
    build_kernel_with(sigma, dt, grid, &KernelOptions::default())
}

pub fn build_kernel_with(sigma: &Matrix, dt: f64, grid: &Grid, opts: &KernelOptions) -> Result<TransitionKernel> {
    let d = grid.dim();
    if sigma.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: sigma.nrows(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    linalg::spd_eigen(sigma, "noise covariance Σ")?;
    let target = sigma * dt;
    for k in 0..d {
        let sd = target[(k, k)].sqrt();
        let required = sd / opts.min_nodes_per_std;
        if grid.axis(k).step > required * (1.0 + 1e-12) {
            return Err(Error::GridTooCoarse {
                axis: k,
                spacing: grid.axis(k).step,
                required,
            });
        }
    }
    let precision = linalg::spd_inverse(&target, "ΔtΣ")?;
    let h = grid.steps();
    let mut radius = [0usize; MAX_DIM];
    for k in 0..d {
        // Extent of the Mahalanobis ellipsoid along axis k is trunc·sqrt(C_kk).
        radius[k] = (opts.truncation * target[(k, k)].sqrt() / h[k]).floor() as usize;
    }
    let mut offsets = Vec::new();
    let mut pos = vec![0.0; d];
    let total: usize = (0..d).map(|k| 2 * radius[k] + 1).product();
    for flat in 0..total {
        let mut o = [0isize; MAX_DIM];
        let mut rem = flat;
        for k in (0..d).rev() {
            let span = 2 * radius[k] + 1;
            o[k] = (rem % span) as isize - radius[k] as isize;
            rem /= span;
        }
        for k in 0..d {
            pos[k] = o[k] as f64 * h[k];
        }
        let q = quad(&precision, &pos);
        if q <= opts.truncation * opts.truncation {
            offsets.push(o);
        }
    }
    let points: Vec<Vec<f64>> = offsets
        .iter()
        .map(|o| (0..d).map(|k| o[k] as f64 * h[k]).collect())
        .collect();
    // Fixed-point moment matching: adjust the shape matrix until the discrete
    // covariance equals ΔtΣ.
    let mut shape = target.clone();
    let mut weights = vec![0.0; offsets.len()];
    for _ in 0..100 {
        let prec = linalg::spd_inverse(&shape, "kernel shape")?;
        for (w, p) in weights.iter_mut().zip(&points) {
            *w = (-0.5 * quad(&prec, p)).exp();
        }
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        let cov = discrete_cov(&weights, &points, d);
        let err = &target - &cov;
        if err.amax() <= 1e-15 * target.amax() {
            break;
        }
        shape += err;
    }
    let band = opts.extrapolation_band.min(grid.axes().iter().map(|a| a.len).min().unwrap_or(2));
    let reach = radius[..d].iter().cloned().max().unwrap_or(0).max(1);
    Ok(TransitionKernel {
        dt,
        sigma: sigma.clone(),
        grid: grid.clone(),
        offsets,
        weights,
        radius,
        opts: opts.clone(),
        ghost_linear: ghost_coefficients(1, band.max(2), reach),
        ghost_quadratic: ghost_coefficients(2, band.max(3), reach),
    })
}

fn quad(prec: &Matrix, x: &[f64]) -> f64 {
    let d = x.len();
    let mut q = 0.0;
    for a in 0..d {
        for b in 0..d {
            q += x[a] * prec[(a, b)] * x[b];
        }
    }
    q
}

fn discrete_cov(weights: &[f64], points: &[Vec<f64>], d: usize) -> Matrix {
    let mut c = Matrix::zeros(d, d);
    for (w, p) in weights.iter().zip(points) {
        for a in 0..d {
            for b in 0..d {
                c[(a, b)] += w * p[a] * p[b];
            }
        }
    }
    c
}

/// Padded copy of a grid field with `r_k` ghost layers on each side of axis k.
struct Padded {
    strides: [usize; MAX_DIM],
    data: Vec<f64>,
}

impl TransitionKernel {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn boundary(&self) -> BoundaryRule {
        self.opts.boundary
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Stencil offsets in node units and their probabilities.
    pub fn stencil(&self) -> impl Iterator<Item = (&[isize], f64)> {
        let d = self.grid.dim();
        self.offsets.iter().map(move |o| &o[..d]).zip(self.weights.iter().cloned())
    }

    /// (|Σw − 1|, max|mean|, max|cov − ΔtΣ|) of the stencil.
    pub fn moment_errors(&self) -> (f64, f64, f64) {
        let d = self.grid.dim();
        let h = self.grid.steps();
        let points: Vec<Vec<f64>> = self
            .offsets
            .iter()
            .map(|o| (0..d).map(|k| o[k] as f64 * h[k]).collect())
            .collect();
        let total: f64 = self.weights.iter().sum();
        let mut mean = vec![0.0; d];
        for (w, p) in self.weights.iter().zip(&points) {
            for k in 0..d {
                mean[k] += w * p[k];
            }
        }
        let cov = discrete_cov(&self.weights, &points, d);
        let target = &self.sigma * self.dt;
        (
            (total - 1.0).abs(),
            mean.iter().map(|m| m.abs()).fold(0.0, f64::max),
            (cov - target).amax(),
        )
    }

    fn pad(&self, f: &[f64], fill: Option<Extrapolation>) -> Padded {
        let g = &self.grid;
        let d = g.dim();
        let mut dims = [1usize; MAX_DIM];
        for k in 0..d {
            dims[k] = g.axis(k).len + 2 * self.radius[k];
        }
        let mut strides = [1usize; MAX_DIM];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let total: usize = dims[..d].iter().product();
        let empty = if fill.is_some() { 0.0 } else { f64::NAN };
        let mut data = vec![empty; total];
        for i in 0..g.len() {
            let idx = g.unravel(i);
            let p: usize = (0..d).map(|k| (idx[k] + self.radius[k]) * strides[k]).sum();
            data[p] = f[i];
        }
        let mut padded = Padded { strides, data };
        if let Some(kind) = fill {
            self.fill_ghosts(&mut padded, kind);
        }
        padded
    }

    fn fill_ghosts(&self, p: &mut Padded, kind: Extrapolation) {
        let g = &self.grid;
        let d = g.dim();
        let coeffs = match kind {
            Extrapolation::Linear => &self.ghost_linear,
            Extrapolation::Quadratic | Extrapolation::QuadraticCapped => &self.ghost_quadratic,
        };
        let capped = kind == Extrapolation::QuadraticCapped;
        let band = coeffs.first().map(|c| c.len()).unwrap_or(0);
        for k in 0..d {
            let r = self.radius[k];
            if r == 0 {
                continue;
            }
            let len = g.axis(k).len;
            let s = p.strides[k];
            let total = p.data.len();
            for start in 0..total {
                // Walk lines along axis k that begin at the first interior node,
                // with later axes restricted to interior positions.
                let mut rem = start;
                let mut ok = true;
                for j in 0..d {
                    let pos = rem / p.strides[j];
                    rem %= p.strides[j];
                    if j == k {
                        ok &= pos == r;
                    } else if j > k {
                        ok &= pos >= self.radius[j] && pos < self.radius[j] + g.axis(j).len;
                    }
                }
                if !ok {
                    continue;
                }
                for (gi, c) in coeffs.iter().enumerate().take(r) {
                    let dist = gi + 1;
                    let mut lo: f64 = (0..band).map(|j| c[j] * p.data[start + j * s]).sum();
                    let top = start + (len - 1) * s;
                    let mut hi: f64 = (0..band).map(|j| c[j] * p.data[top - j * s]).sum();
                    if capped {
                        lo = lo.min(p.data[start]);
                        hi = hi.min(p.data[top]);
                    }
                    p.data[start - dist * s] = lo;
                    p.data[top + dist * s] = hi;
                }
            }
        }
    }

    fn padded_offsets(&self, p: &Padded) -> Vec<isize> {
        let d = self.grid.dim();
        self.offsets
            .iter()
            .map(|o| (0..d).map(|k| o[k] * p.strides[k] as isize).sum())
            .collect()
    }

    fn padded_index(&self, p: &Padded, i: usize) -> usize {
        let idx = self.grid.unravel(i);
        (0..self.grid.dim())
            .map(|k| (idx[k] + self.radius[k]) * p.strides[k])
            .sum()
    }

    /// E[f(y + Z_Δt)] at every node.
    pub fn apply(&self, f: &[f64], kind: Extrapolation, out: &mut [f64]) {
        let fill = match self.opts.boundary {
            BoundaryRule::Extrapolate => Some(kind),
            BoundaryRule::Renormalize => None,
        };
        let p = self.pad(f, fill);
        let offs = self.padded_offsets(&p);
        for (i, o) in out.iter_mut().enumerate() {
            let c = self.padded_index(&p, i) as isize;
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (w, off) in self.weights.iter().zip(&offs) {
                let v = p.data[(c + off) as usize];
                if v.is_nan() {
                    continue;
                }
                acc += w * v;
                mass += w;
            }
            *o = if fill.is_some() { acc } else { acc / mass };
        }
    }

    /// log E[exp(φ(y + Z_Δt))] at every node, computed without overflow.
    /// Ghost values are capped at the edge value: the exponential weighting
    /// would otherwise feed any upward extrapolation back into the edge.
    pub fn apply_log(&self, phi: &[f64], out: &mut [f64]) {
        let fill = match self.opts.boundary {
            BoundaryRule::Extrapolate => Some(Extrapolation::QuadraticCapped),
            BoundaryRule::Renormalize => None,
        };
        let p = self.pad(phi, fill);
        let offs = self.padded_offsets(&p);
        let (lo, hi) = p
            .data
            .iter()
            .filter(|v| !v.is_nan())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if hi - lo < 600.0 {
            // One global shift keeps every exponential in range.
            let e: Vec<f64> = p
                .data
                .iter()
                .map(|&v| if v.is_nan() { f64::NAN } else { (v - hi).exp() })
                .collect();
            for (i, o) in out.iter_mut().enumerate() {
                let c = self.padded_index(&p, i) as isize;
                let mut acc = 0.0;
                let mut mass = 0.0;
                for (w, off) in self.weights.iter().zip(&offs) {
                    let v = e[(c + off) as usize];
                    if v.is_nan() {
                        continue;
                    }
                    acc += w * v;
                    mass += w;
                }
                let scale = if fill.is_some() { 1.0 } else { mass };
                *o = hi + (acc / scale).ln();
            }
        } else {
            // Shift by the largest value under each node's stencil.
            for (i, o) in out.iter_mut().enumerate() {
                let c = self.padded_index(&p, i) as isize;
                let top = offs
                    .iter()
                    .map(|off| p.data[(c + off) as usize])
                    .filter(|v| !v.is_nan())
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut acc = 0.0;
                let mut mass = 0.0;
                for (w, off) in self.weights.iter().zip(&offs) {
                    let v = p.data[(c + off) as usize];
                    if v.is_nan() {
                        continue;
                    }
                    acc += w * (v - top).exp();
                    mass += w;
                }
                let scale = if fill.is_some() { 1.0 } else { mass };
                *o = top + (acc / scale).ln();
            }
        }
    }
}

/// Central differences along axis k (one-sided at the edges) of a scalar field.
pub(crate) fn derivative(grid: &Grid, f: &[f64], k: usize, out: &mut [f64]) {
    let s = grid.stride(k);
    let h = grid.axis(k).step;
    let len = grid.axis(k).len;
    for i in 0..grid.len() {
        let pos = grid.unravel(i)[k];
        out[i] = if pos == 0 {
            (f[i + s] - f[i]) / h
        } else if pos + 1 == len {
            (f[i] - f[i - s]) / h
        } else {
            (f[i + s] - f[i - s]) / (2.0 * h)
        };
    }
}

/// tr(Σ ∇²f) by central differences, with one-sided stencils clamped inward at edges.
pub(crate) fn trace_hessian(grid: &Grid, sigma: &Matrix, f: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let clamp = |pos: usize, len: usize| pos.clamp(1, len - 2);
    for i in 0..grid.len() {
        let idx = grid.unravel(i);
        let mut acc = 0.0;
        for a in 0..d {
            for b in 0..d {
                let coef = sigma[(a, b)];
                if coef == 0.0 {
                    continue;
                }
                let mut c = idx;
                c[a] = clamp(c[a], grid.axis(a).len);
                c[b] = clamp(c[b], grid.axis(b).len);
                let base = grid.ravel(&c[..d]);
                let (sa, sb) = (grid.stride(a), grid.stride(b));
                let (ha, hb) = (grid.axis(a).step, grid.axis(b).step);
                let second = if a == b {
                    (f[base + sa] - 2.0 * f[base] + f[base - sa]) / (ha * ha)
                } else {
                    (f[base + sa + sb] - f[base + sa - sb] - f[base - sa + sb] + f[base - sa - sb]) / (4.0 * ha * hb)
                };
                acc += coef * second;
            }
        }
        out[i] = acc;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldDiagnostics {
    /// Largest interior gap between the propagated H and central differences
    /// of Γ, over slices t < T, relative to its allowed bound (ten times the
    /// central-difference error plus the gap already present at T).
    pub price_gap_ratio: f64,
    pub price_gap: f64,
    /// Most negative eigenvalue of Λ over all slices t < T.
    pub min_lambda_eigenvalue: f64,
}

/// Γ(t,·), H(t,·) and Λ(t,·) on a fixed grid at times t_k = kΔt.
#[derive(Clone, Debug)]
pub struct SpaceTimeField {
    grid: Grid,
    sigma: Matrix,
    dt: f64,
    times: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    price: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    diagnostics: FieldDiagnostics,
}

/// Number of Δt steps in `horizon`, insisting that Δt divides it.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    let n = (horizon / dt).round();
    if !(horizon > 0.0) || n < 1.0 || ((n * dt - horizon) / horizon).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "time step {dt} must divide the horizon {horizon}"
        )));
    }
    Ok(n as usize)
}

/// Λ_kl = sym(∂_l H_k) by central differences.
fn lambda_from_price(grid: &Grid, price: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let n = grid.len();
    let mut comp = vec![0.0; n];
    let mut der = vec![0.0; n];
    let mut jac = vec![0.0; n * d * d];
    for k in 0..d {
        for i in 0..n {
            comp[i] = price[i * d + k];
        }
        for l in 0..d {
            derivative(grid, &comp, l, &mut der);
            for i in 0..n {
                jac[i * d * d + k * d + l] = der[i];
            }
        }
    }
    for i in 0..n {
        for k in 0..d {
            for l in 0..d {
                out[i * d * d + k * d + l] = 0.5 * (jac[i * d * d + k * d + l] + jac[i * d * d + l * d + k]);
            }
        }
    }
}

/// Propagates the terminal potential and map backward from `horizon` to 0.
pub fn propagate(potential: &BrenierPotential, kernel: &TransitionKernel, horizon: f64) -> Result<SpaceTimeField> {
    let grid = potential.grid().clone();
    if &grid != kernel.grid() {
        return Err(Error::invalid("potential and kernel live on different grids"));
    }
    let d = grid.dim();
    let n = grid.len();
    let steps = step_count(horizon, kernel.dt())?;
    let dt = kernel.dt();
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let mut gamma = vec![Vec::new(); steps + 1];
    let mut price = vec![Vec::new(); steps + 1];
    let mut lambda = vec![Vec::new(); steps + 1];
    gamma[steps] = potential.values().to_vec();
    price[steps] = potential.gradient().to_vec();
    let mut comp = vec![0.0; n];
    let mut next = vec![0.0; n];
    for k in (0..steps).rev() {
        let mut g = vec![0.0; n];
        kernel.apply(&gamma[k + 1], Extrapolation::Quadratic, &mut g);
        let mut p = vec![0.0; n * d];
        for c in 0..d {
            for i in 0..n {
                comp[i] = price[k + 1][i * d + c];
            }
            kernel.apply(&comp, Extrapolation::Linear, &mut next);
            for i in 0..n {
                p[i * d + c] = next[i];
            }
        }
        gamma[k] = g;
        price[k] = p;
    }
    for k in 0..=steps {
        let mut l = vec![0.0; n * d * d];
        lambda_from_price(&grid, &price[k], &mut l);
        lambda[k] = l;
    }
    if gamma.iter().chain(&price).any(|s| s.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite("propagated field".into()));
    }
    let mut field = SpaceTimeField {
        grid,
        sigma: kernel.sigma().clone(),
        dt,
        times,
        gamma,
        price,
        lambda,
        diagnostics: FieldDiagnostics::default(),
    };
    field.diagnostics = field.check_consistency();
    if field.diagnostics.price_gap_ratio > 1.0 {
        return Err(Error::InconsistentField {
            gap: field.diagnostics.price_gap,
            limit: field.diagnostics.price_gap / field.diagnostics.price_gap_ratio,
        });
    }
    Ok(field)
}

impl SpaceTimeField {
    fn check_consistency(&self) -> FieldDiagnostics {
        let d = self.dim();
        let n = self.grid.len();
        let interior = self.grid.interior(0.8);
        let mut der = vec![0.0; n];
        let mut comp = vec![0.0; n];
        let mut second = vec![0.0; n];
        let mut worst_ratio: f64 = 0.0;
        let mut worst_gap: f64 = 0.0;
        let mut min_eig = f64::INFINITY;
        let steps = self.times.len() - 1;
        // Mismatch already present in the terminal data (recovered Γ against
        // the map it was fitted to) is carried along by the propagation, and
        // diffuses inward from anywhere off the edge nodes.
        let inner: Vec<usize> = (0..n).filter(|&i| self.grid.has_margin(i, 1)).collect();
        let mut inherited: f64 = 0.0;
        for c in 0..d {
            derivative(&self.grid, &self.gamma[steps], c, &mut der);
            for &i in &inner {
                inherited = inherited.max((der[i] - self.price[steps][i * d + c]).abs());
            }
        }
        for k in 0..steps {
            let mut gap: f64 = 0.0;
            let mut curvature: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for c in 0..d {
                derivative(&self.grid, &self.gamma[k], c, &mut der);
                for i in 0..n {
                    comp[i] = self.price[k][i * d + c];
                }
                let h = self.grid.axis(c).step;
                let s = self.grid.stride(c);
                for i in 0..n {
                    let pos = self.grid.unravel(i)[c];
                    second[i] = if pos == 0 || pos + 1 == self.grid.axis(c).len {
                        0.0
                    } else {
                        (comp[i + s] - 2.0 * comp[i] + comp[i - s]) / (h * h)
                    };
                }
                for &i in &interior {
                    gap = gap.max((der[i] - comp[i]).abs());
                    scale = scale.max(comp[i].abs());
                }
                for &i in &inner {
                    curvature = curvature.max(h * h / 6.0 * second[i].abs());
                }
            }
            let bound = 10.0 * (curvature + inherited) + 1e-9 * scale.max(1.0);
            worst_ratio = worst_ratio.max(gap / bound);
            worst_gap = worst_gap.max(gap);
            for &i in &interior {
                min_eig = min_eig.min(linalg::min_eigenvalue_slice(&self.lambda[k][i * d * d..(i + 1) * d * d], d));
            }
        }
        FieldDiagnostics {
            price_gap_ratio: worst_ratio,
            price_gap: worst_gap,
            min_lambda_eigenvalue: min_eig,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn diagnostics(&self) -> &FieldDiagnostics {
        &self.diagnostics
    }

    /// Index of the time slice nearest to `t`.
    pub fn slice_index(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.steps())
    }

    pub fn gamma(&self, k: usize) -> &[f64] {
        &self.gamma[k]
    }

    /// H components at slice k, `dim` values per node.
    pub fn price(&self, k: usize) -> &[f64] {
        &self.price[k]
    }

    /// Λ entries at slice k, row-major `dim × dim` per node.
    pub fn lambda(&self, k: usize) -> &[f64] {
        &self.lambda[k]
    }

    pub fn gamma_at(&self, k: usize, y: &[f64]) -> (f64, bool) {
        self.grid.interpolate(&self.gamma[k], y)
    }

    pub fn price_at(&self, k: usize, y: &[f64], out: &mut [f64]) -> bool {
        self.grid.interpolate_into(&self.price[k], self.dim(), y, out)
    }

    pub fn lambda_at(&self, k: usize, y: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim();
        self.grid.interpolate_into(&self.lambda[k], d * d, y, out)
    }

    /// tr(ΣΛ) at every node of slice k.
    pub fn bidask_slice(&self, k: usize) -> Vec<f64> {
        let d = self.dim();
        (0..self.grid.len())
            .map(|i| trace_product(&self.sigma, &self.lambda[k][i * d * d..(i + 1) * d * d], d))
            .collect()
    }

    /// One row per node for slice k: coordinates, Γ, H, Λ entries, bid-ask rate.
    pub fn write_slice_csv<W: Write>(&self, k: usize, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|c| format!("y{c}")).collect();
        header.push("gamma".into());
        header.extend((0..d).map(|c| format!("price{c}")));
        for a in 0..d {
            for b in 0..d {
                header.push(format!("lambda{a}{b}"));
            }
        }
        header.push("bidask".into());
        writeln!(out, "{}", header.join(","))?;
        let rate = self.bidask_slice(k);
        let mut y = vec![0.0; d];
        for i in 0..self.grid.len() {
            self.grid.coords_into(i, &mut y);
            let mut row: Vec<String> = y.iter().map(|x| x.to_string()).collect();
            row.push(self.gamma[k][i].to_string());
            row.extend(self.price[k][i * d..(i + 1) * d].iter().map(|x| x.to_string()));
            row.extend(self.lambda[k][i * d * d..(i + 1) * d * d].iter().map(|x| x.to_string()));
            row.push(rate[i].to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn trace_product(sigma: &Matrix, lam: &[f64], d: usize) -> f64 {
    let mut t = 0.0;
    for a in 0..d {
        for b in 0..d {
            t += sigma[(a, b)] * lam[b * d + a];
        }
    }
    t
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub times: Vec<f64>,
    /// Largest interior |residual| per evaluated time.
    pub max_abs: Vec<f64>,
    pub mean_abs: Vec<f64>,
    /// Largest interior |residual| over the largest interior sum of the
    /// magnitudes of the equation's terms, per evaluated time.
    pub relative: Vec<f64>,
    pub max_relative: f64,
}

impl ResidualSummary {
    pub(crate) fn push(&mut self, t: f64, residual: &[f64], terms: &[f64], interior: &[usize]) {
        let max_abs = interior.iter().map(|&i| residual[i].abs()).fold(0.0, f64::max);
        let mean_abs = interior.iter().map(|&i| residual[i].abs()).sum::<f64>() / interior.len().max(1) as f64;
        let scale = interior.iter().map(|&i| terms[i]).fold(0.0, f64::max);
        let rel = if scale > 0.0 { max_abs / scale } else { 0.0 };
        self.times.push(t);
        self.max_abs.push(max_abs);
        self.mean_abs.push(mean_abs);
        self.relative.push(rel);
        self.max_relative = self.max_relative.max(rel);
    }
}

/// Slices at which residuals are summarized: nearest to T/4, T/2, 3T/4.
pub(crate) fn residual_slices(steps: usize) -> Vec<usize> {
    let mut v: Vec<usize> = [0.25, 0.5, 0.75]
        .iter()
        .map(|f| ((f * steps as f64).round() as usize).clamp(1, steps - 1))
        .collect();
    v.dedup();
    v
}

/// ∂H_i/∂t + ½tr(Σ∇²H_i) at slice k (central in time), per node and asset,
/// plus the per-node sum of the magnitudes of the two terms.
pub fn heat_residual_slice(field: &SpaceTimeField, sigma: &Matrix, k: usize) -> (Vec<f64>, Vec<f64>) {
    let d = field.dim();
    let n = field.grid.len();
    let mut res = vec![0.0; n * d];
    let mut terms = vec![0.0; n * d];
    let mut comp = vec![0.0; n];
    let mut lap = vec![0.0; n];
    let (lo, hi) = (k.saturating_sub(1), (k + 1).min(field.steps()));
    let span = (hi - lo) as f64 * field.dt;
    for c in 0..d {
        for i in 0..n {
            comp[i] = field.price[k][i * d + c];
        }
        trace_hessian(&field.grid, sigma, &comp, &mut lap);
        for i in 0..n {
            let dt_term = (field.price[hi][i * d + c] - field.price[lo][i * d + c]) / span;
            res[i * d + c] = dt_term + 0.5 * lap[i];
            terms[i * d + c] = dt_term.abs() + 0.5 * lap[i].abs();
        }
    }
    (res, terms)
}

/// Interior (central 80%) heat-equation residual of H at T/4, T/2, 3T/4.
pub fn heat_residual(field: &SpaceTimeField, sigma: &Matrix) -> ResidualSummary {
    heat_residual_at(field, sigma, &residual_slices(field.steps()))
}

pub fn heat_residual_at(field: &SpaceTimeField, sigma: &Matrix, slices: &[usize]) -> ResidualSummary {
    let d = field.dim();
    let interior = field.grid.interior(0.8);
    let mut summary = ResidualSummary::default();
    for &k in slices {
        let (res, terms) = heat_residual_slice(field, sigma, k);
        // Flatten components: residual per (node, asset), interior over nodes.
        let idx: Vec<usize> = interior.iter().flat_map(|&i| (0..d).map(move |c| i * d + c)).collect();
        summary.push(field.times[k], &res, &terms, &idx);
    }
    summary
}

/// tr(ΣΛ(t,y)) by interpolation in y at the slice nearest t; flags clamping.
pub fn bidask_rate(field: &SpaceTimeField, sigma: &Matrix, t: f64, y: &[f64]) -> (f64, bool) {
    let d = field.dim();
    let k = field.slice_index(t);
    let mut lam = vec![0.0; d * d];
    let clamped = field.lambda_at(k, y, &mut lam);
    (trace_product(sigma, &lam, d), clamped)
}
