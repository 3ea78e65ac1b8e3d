//! Brenier potential recovery from a gridded transport map, and the discrete
//! convex conjugate.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::transport::{DiscreteMeasure, TransportMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryOptions {
    /// Reject maps whose weighted relative curl exceeds this.
    pub curl_limit: f64,
    /// Monotonicity violations of a gradient component along its own axis,
    /// relative to the component's range, that trigger isotonic projection.
    pub convexity_tol: f64,
    /// Conjugate-gradient stopping tolerance for the least-squares integration.
    pub solver_tol: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            curl_limit: 0.5,
            convexity_tol: 1e-9,
            solver_tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryDiagnostics {
    /// Weighted RMS curl over the RMS Jacobian at the loop scale where it is
    /// smallest (0 in 1D).
    pub curl_residual: f64,
    /// RMS edge misfit of the fitted differences, relative to the RMS gradient variation.
    pub fit_residual: f64,
    /// Largest change made by the isotonic projection, relative to the gradient range.
    pub projection_magnitude: f64,
    pub projected_lines: usize,
    pub cg_iterations: usize,
}

/// Γ on a tensor grid together with its gradient (the transport map).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrenierPotential {
    grid: Grid,
    values: Vec<f64>,
    gradient: Vec<f64>,
    normalization_offset: f64,
    diagnostics: RecoveryDiagnostics,
}

impl BrenierPotential {
    /// Assembles a potential from known node values and gradients, shifting the
    /// values so their `reference`-weighted mean is zero.
    pub fn from_parts(grid: Grid, mut values: Vec<f64>, gradient: Vec<f64>, reference: &DiscreteMeasure) -> Result<Self> {
        if values.len() != grid.len() || gradient.len() != grid.len() * grid.dim() {
            return Err(Error::invalid("potential values and gradients must match the grid"));
        }
        if reference.len() != grid.len() {
            return Err(Error::invalid("reference measure must live on the potential grid"));
        }
        if values.iter().chain(&gradient).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("potential".into()));
        }
        let offset = reference.expect(&values);
        values.iter_mut().for_each(|v| *v -= offset);
        Ok(Self {
            grid,
            values,
            gradient,
            normalization_offset: offset,
            diagnostics: RecoveryDiagnostics::default(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gradient(&self) -> &[f64] {
        &self.gradient
    }

    pub fn gradient_at_node(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.gradient[i * d..(i + 1) * d]
    }

    /// Constant subtracted to enforce the zero-mean normalization.
    pub fn normalization_offset(&self) -> f64 {
        self.normalization_offset
    }

    pub fn diagnostics(&self) -> &RecoveryDiagnostics {
        &self.diagnostics
    }

    /// Most negative second difference along any axis line, relative to the
    /// largest absolute second difference (0 when every line is convex).
    pub fn convexity_defect(&self) -> f64 {
        second_difference_defect(&self.grid, &self.values)
    }

    /// Most negative value of (Γ(a)+Γ(b))/2 − Γ((a+b)/2) over sampled node pairs
    /// whose midpoint is a node, relative to the spread of Γ.
    pub fn midpoint_convexity_defect(&self, samples: usize, seed: u64) -> f64 {
        midpoint_defect(&self.grid, &self.values, samples, seed)
    }

    /// One row per node: coordinates, Γ, ∇Γ components.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|k| format!("y{k}")).collect();
        header.push("gamma".into());
        header.extend((0..d).map(|k| format!("grad{k}")));
        writeln!(out, "{}", header.join(","))?;
        let mut y = vec![0.0; d];
        for i in 0..self.grid.len() {
            self.grid.coords_into(i, &mut y);
            let row: Vec<String> = y
                .iter()
                .chain(std::iter::once(&self.values[i]))
                .chain(self.gradient_at_node(i))
                .map(|x| x.to_string())
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn second_difference_defect(grid: &Grid, values: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..grid.dim() {
        let s = grid.stride(k);
        let len = grid.axis(k).len;
        for i in 0..grid.len() {
            let pos = grid.unravel(i)[k];
            if pos == 0 || pos + 1 >= len {
                continue;
            }
            let d2 = values[i + s] - 2.0 * values[i] + values[i - s];
            worst = worst.min(d2);
            scale = scale.max(d2.abs());
        }
    }
    if scale > 0.0 {
        worst / scale
    } else {
        0.0
    }
}

pub(crate) fn midpoint_defect(grid: &Grid, values: &[f64], samples: usize, seed: u64) -> f64 {
    let d = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    let mut a = [0usize; 3];
    let mut b = [0usize; 3];
    let mut mid = [0usize; 3];
    for _ in 0..samples {
        for k in 0..d {
            let len = grid.axis(k).len;
            a[k] = rng.random_range(0..len);
            // Same parity keeps the midpoint on a node.
            let mut other = rng.random_range(0..len);
            if (other + a[k]) % 2 == 1 {
                other = if other + 1 < len { other + 1 } else { other - 1 };
            }
            b[k] = other;
            mid[k] = (a[k] + b[k]) / 2;
        }
        let (ia, ib, im) = (grid.ravel(&a[..d]), grid.ravel(&b[..d]), grid.ravel(&mid[..d]));
        let gap = 0.5 * (values[ia] + values[ib]) - values[im];
        worst = worst.min(gap);
    }
    worst / spread
}

/// Pool-adjacent-violators: the nondecreasing least-squares fit, in place.
pub(crate) fn isotonic_in_place(x: &mut [f64]) {
    let mut sums: Vec<f64> = Vec::with_capacity(x.len());
    let mut counts: Vec<usize> = Vec::with_capacity(x.len());
    for &v in x.iter() {
        sums.push(v);
        counts.push(1);
        while sums.len() > 1 {
            let n = sums.len();
            if sums[n - 2] / counts[n - 2] as f64 > sums[n - 1] / counts[n - 1] as f64 {
                let s = sums.pop().unwrap();
                let c = counts.pop().unwrap();
                sums[n - 2] += s;
                counts[n - 2] += c;
            } else {
                break;
            }
        }
    }
    let mut pos = 0;
    for (s, c) in sums.iter().zip(&counts) {
        let mean = s / *c as f64;
        x[pos..pos + c].fill(mean);
        pos += c;
    }
}

/// Projects each gradient component onto nondecreasing sequences along its own
/// axis wherever a violation exceeds `tol` times the component's range.
/// Returns (largest relative change, number of projected lines).
fn enforce_monotone_components(grid: &Grid, gradient: &mut [f64], tol: f64) -> (f64, usize) {
    let d = grid.dim();
    let mut max_change: f64 = 0.0;
    let mut lines = 0;
    let mut buf = Vec::new();
    for k in 0..d {
        let (lo, hi) = (0..grid.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
            let g = gradient[i * d + k];
            (lo.min(g), hi.max(g))
        });
        let range = (hi - lo).max(f64::MIN_POSITIVE);
        let s = grid.stride(k);
        let len = grid.axis(k).len;
        for start in 0..grid.len() {
            if grid.unravel(start)[k] != 0 {
                continue;
            }
            let violation = (0..len - 1)
                .map(|p| gradient[(start + p * s) * d + k] - gradient[(start + (p + 1) * s) * d + k])
                .fold(f64::NEG_INFINITY, f64::max);
            if violation <= tol * range {
                continue;
            }
            buf.clear();
            buf.extend((0..len).map(|p| gradient[(start + p * s) * d + k]));
            isotonic_in_place(&mut buf);
            for (p, v) in buf.iter().enumerate() {
                let slot = &mut gradient[(start + p * s) * d + k];
                max_change = max_change.max((*slot - v).abs() / range);
                *slot = *v;
            }
            lines += 1;
        }
    }
    (max_change, lines)
}

/// Weighted RMS curl of a 2D or 3D gradient field over its RMS Jacobian,
/// measured on square loops of side 1, 2, 4, … nodes and minimized over the
/// loop size. A piecewise-constant map (many source nodes sharing one target
/// point) has large curl at the node scale that averages out on wider loops;
/// a genuinely rotational field does not.
fn relative_curl(grid: &Grid, gradient: &[f64], weights: &[f64]) -> f64 {
    let d = grid.dim();
    if d == 1 {
        return 0.0;
    }
    let shortest = grid.axes().iter().map(|a| a.len).min().unwrap_or(0);
    let mut best = f64::INFINITY;
    let mut span = 1;
    while span < shortest.saturating_sub(1) && span <= 16 {
        best = best.min(curl_at_scale(grid, gradient, weights, span));
        span *= 2;
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

fn curl_at_scale(grid: &Grid, gradient: &[f64], weights: &[f64], span: usize) -> f64 {
    let d = grid.dim();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..grid.len() {
        let idx = grid.unravel(i);
        for a in 0..d {
            for b in a + 1..d {
                if idx[a] + span >= grid.axis(a).len || idx[b] + span >= grid.axis(b).len {
                    continue;
                }
                let (sa, sb) = (span * grid.stride(a), span * grid.stride(b));
                let (ha, hb) = (span as f64 * grid.axis(a).step, span as f64 * grid.axis(b).step);
                let c = [i, i + sa, i + sb, i + sa + sb];
                let g = |node: usize, comp: usize| gradient[node * d + comp];
                // Derivatives at the loop centre.
                let da = |comp: usize| (g(c[1], comp) + g(c[3], comp) - g(c[0], comp) - g(c[2], comp)) / (2.0 * ha);
                let db = |comp: usize| (g(c[2], comp) + g(c[3], comp) - g(c[0], comp) - g(c[1], comp)) / (2.0 * hb);
                let (da_ga, da_gb, db_ga, db_gb) = (da(a), da(b), db(a), db(b));
                let w = 0.25 * (weights[c[0]] + weights[c[1]] + weights[c[2]] + weights[c[3]]);
                num += w * (da_gb - db_ga).powi(2);
                den += w * 0.5 * (da_ga * da_ga + db_gb * db_gb + da_gb * da_gb + db_ga * db_ga);
            }
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

/// Edge targets t_e = h (g(a) + g(b))/2 for every axis edge, indexed [axis][lower node].
fn edge_targets(grid: &Grid, gradient: &[f64]) -> Vec<Vec<f64>> {
    let d = grid.dim();
    (0..d)
        .map(|k| {
            let s = grid.stride(k);
            let h = grid.axis(k).step;
            (0..grid.len())
                .map(|i| {
                    if grid.unravel(i)[k] + 1 < grid.axis(k).len {
                        0.5 * h * (gradient[i * d + k] + gradient[(i + s) * d + k])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Applies the weighted grid Laplacian (LΓ)_a = Σ_e (Γ_a − Γ_b)/h_e².
fn apply_laplacian(grid: &Grid, x: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    out.fill(0.0);
    for k in 0..d {
        let s = grid.stride(k);
        let w = 1.0 / (grid.axis(k).step * grid.axis(k).step);
        let len = grid.axis(k).len;
        for i in 0..grid.len() {
            if grid.unravel(i)[k] + 1 < len {
                let diff = w * (x[i] - x[i + s]);
                out[i] += diff;
                out[i + s] -= diff;
            }
        }
    }
}

/// Least-squares integration: minimize Σ_e ((Γ_b − Γ_a − t_e)/h_e)².
fn integrate(grid: &Grid, gradient: &[f64], tol: f64) -> (Vec<f64>, usize) {
    let d = grid.dim();
    let targets = edge_targets(grid, gradient);
    let n = grid.len();
    // Path integration gives an exact answer in 1D and a warm start otherwise:
    // along axis 0 on the first line, then along the last axis.
    let mut x = vec![0.0; n];
    for i in 0..n {
        let idx = grid.unravel(i);
        let last = d - 1;
        if idx[last] > 0 {
            let prev = i - grid.stride(last);
            x[i] = x[prev] + targets[last][prev];
        } else if d > 1 {
            let k = (0..last).rev().find(|&k| idx[k] > 0);
            if let Some(k) = k {
                let prev = i - grid.stride(k);
                x[i] = x[prev] + targets[k][prev];
            }
        }
    }
    if d == 1 {
        return (x, 0);
    }
    let mut rhs = vec![0.0; n];
    for k in 0..d {
        let s = grid.stride(k);
        let w = 1.0 / (grid.axis(k).step * grid.axis(k).step);
        for i in 0..n {
            if grid.unravel(i)[k] + 1 < grid.axis(k).len {
                rhs[i] -= w * targets[k][i];
                rhs[i + s] += w * targets[k][i];
            }
        }
    }
    let mut ax = vec![0.0; n];
    apply_laplacian(grid, &x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    let stop = tol * tol * rhs.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut ap = vec![0.0; n];
    let mut iters = 0;
    while rr > stop && iters < 20 * n {
        apply_laplacian(grid, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        iters += 1;
    }
    (x, iters)
}

fn fit_residual(grid: &Grid, values: &[f64], gradient: &[f64]) -> f64 {
    let d = grid.dim();
    let targets = edge_targets(grid, gradient);
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..d {
        let s = grid.stride(k);
        let h = grid.axis(k).step;
        for i in 0..grid.len() {
            if grid.unravel(i)[k] + 1 < grid.axis(k).len {
                let e = (values[i + s] - values[i] - targets[k][i]) / h;
                let var = gradient[(i + s) * d + k] - gradient[i * d + k];
                num += e * e;
                den += var * var;
            }
        }
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Recovers Γ from a transport map defined on a tensor grid.
pub fn recover_potential(map: &TransportMap, reference: &DiscreteMeasure) -> Result<BrenierPotential> {
    recover_potential_with(map, reference, &RecoveryOptions::default())
}

pub fn recover_potential_with(
    map: &TransportMap,
    reference: &DiscreteMeasure,
    opts: &RecoveryOptions,
) -> Result<BrenierPotential> {
    let grid = map
        .grid()
        .cloned()
        .ok_or_else(|| Error::invalid("potential recovery needs a map defined on a tensor grid"))?;
    if map.undefined_count() > 0 {
        return Err(Error::invalid(format!(
            "{} grid nodes carry no mass and have no image",
            map.undefined_count()
        )));
    }
    if reference.len() != grid.len() {
        return Err(Error::invalid("reference measure must live on the map's grid"));
    }
    let mut gradient = map.images().to_vec();
    let (projection, lines) = enforce_monotone_components(&grid, &mut gradient, opts.convexity_tol);
    let curl = relative_curl(&grid, &gradient, reference.weights());
    if curl > opts.curl_limit {
        return Err(Error::NotIntegrable {
            residual: curl,
            limit: opts.curl_limit,
        });
    }
    let (values, iters) = integrate(&grid, &gradient, opts.solver_tol);
    let fit = fit_residual(&grid, &values, &gradient);
    let mut pot = BrenierPotential::from_parts(grid, values, gradient, reference)?;
    pot.diagnostics = RecoveryDiagnostics {
        curl_residual: curl,
        fit_residual: fit,
        projection_magnitude: projection,
        projected_lines: lines,
        cg_iterations: iters,
    };
    Ok(pot)
}

/// Γ* evaluated on a set of value points by exhaustive maximization over the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateTable {
    dim: usize,
    value_points: Vec<f64>,
    values: Vec<f64>,
    argmax: Vec<usize>,
    on_boundary: Vec<bool>,
}

impl ConjugateTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value_point(&self, i: usize) -> &[f64] {
        &self.value_points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Grid node attaining the supremum for each value point.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    /// Points whose maximizer sits on the grid boundary (the sup may lie outside).
    pub fn on_boundary(&self) -> &[bool] {
        &self.on_boundary
    }

    pub fn boundary_fraction(&self) -> f64 {
        if self.on_boundary.is_empty() {
            return 0.0;
        }
        self.on_boundary.iter().filter(|b| **b).count() as f64 / self.on_boundary.len() as f64
    }
}

fn is_boundary_node(grid: &Grid, i: usize) -> bool {
    let idx = grid.unravel(i);
    grid.axes()
        .iter()
        .enumerate()
        .any(|(k, a)| idx[k] == 0 || idx[k] + 1 == a.len)
}

/// Γ*(v) = max over nodes y of v·y − Γ(y).
pub fn conjugate(potential: &BrenierPotential, value_points: &[f64]) -> ConjugateTable {
    let grid = potential.grid();
    let d = grid.dim();
    let nodes = grid.points();
    let gamma = potential.values();
    let count = value_points.len() / d;
    let mut values = Vec::with_capacity(count);
    let mut argmax = Vec::with_capacity(count);
    let mut on_boundary = Vec::with_capacity(count);
    for v in value_points.chunks_exact(d) {
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
        for (i, y) in nodes.chunks_exact(d).enumerate() {
            let s: f64 = v.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() - gamma[i];
            if s > best {
                best = s;
                arg = i;
            }
        }
        values.push(best);
        argmax.push(arg);
        on_boundary.push(is_boundary_node(grid, arg));
    }
    ConjugateTable {
        dim: d,
        value_points: value_points.to_vec(),
        values,
        argmax,
        on_boundary,
    }
}

/// E_F[Γ*(ṽ)], the informed trader's maximal expected profit.
pub fn expected_informed_profit(conj: &ConjugateTable, f: &DiscreteMeasure) -> f64 {
    f.expect(conj.values())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pava_matches_hand_computation() {
        let mut x = [1.0, 3.0, 2.0, 4.0, 0.0];
        isotonic_in_place(&mut x);
        assert_eq!(x, [1.0, 2.25, 2.25, 2.25, 2.25]);
        let mut sorted = [0.0, 1.0, 2.0];
        isotonic_in_place(&mut sorted);
        assert_eq!(sorted, [0.0, 1.0, 2.0]);
    }
}
