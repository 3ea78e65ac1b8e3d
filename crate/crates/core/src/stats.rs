//! Regression, kernel density and binning helpers for experiment outputs.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const Z95: f64 = 1.96;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub ci95_low: Vec<f64>,
    pub ci95_high: Vec<f64>,
    pub r_squared: f64,
    pub n_obs: usize,
    pub residuals: Vec<f64>,
}

/// Least squares with homoskedastic standard errors. `columns` are the design
/// columns, the first normally being the intercept.
pub fn ols(y: &[f64], columns: &[Vec<f64>], names: &[&str]) -> Result<RegressionResult> {
    let n = y.len();
    let p = columns.len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("design columns and response differ in length"));
    }
    if n <= p {
        return Err(Error::invalid(format!("{n} observations for {p} coefficients")));
    }
    let x = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
    // Gram–Schmidt pass to find the first dependent column.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..p {
        let mut v = x.column(j).into_owned();
        let norm0 = v.norm();
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            return Err(Error::RankDeficient(j));
        }
        basis.push(v / norm);
    }
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    let chol = xtx.clone().cholesky().ok_or(Error::RankDeficient(p - 1))?;
    let beta = chol.solve(&xty);
    let fitted = &x * &beta;
    let resid: Vec<f64> = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
    let sse: f64 = resid.iter().map(|r| r * r).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let s2 = sse / (n - p) as f64;
    let inv = chol.inverse();
    let se: Vec<f64> = (0..p).map(|j| (s2 * inv[(j, j)]).sqrt()).collect();
    let coefficients: Vec<f64> = beta.iter().cloned().collect();
    Ok(RegressionResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        ci95_low: coefficients.iter().zip(&se).map(|(b, s)| b - Z95 * s).collect(),
        ci95_high: coefficients.iter().zip(&se).map(|(b, s)| b + Z95 * s).collect(),
        coefficients,
        standard_errors: se,
        r_squared: if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 1.0 },
        n_obs: n,
        residuals: resid,
    })
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.coefficients[j])
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Silverman's rule of thumb, 1.06 σ n^{−1/5}.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let (_, sd) = mean_sd(x);
    1.06 * sd * (x.len() as f64).powf(-0.2)
}

#[derive(Clone, Debug)]
pub struct Kde1d {
    samples: Vec<f64>,
    bandwidth: f64,
}

pub fn kde_1d(samples: &[f64], bandwidth: Option<f64>) -> Result<Kde1d> {
    if samples.len() < 30 {
        return Err(Error::invalid(format!("KDE needs at least 30 samples, got {}", samples.len())));
    }
    let (_, sd) = mean_sd(samples);
    if !(sd > 0.0) {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    let bandwidth = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    if !(bandwidth > 0.0) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    let mut samples = samples.to_vec();
    samples.sort_by(f64::total_cmp);
    Ok(Kde1d { samples, bandwidth })
}

impl Kde1d {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        // Kernel mass beyond 8h is below 1e-14 of the peak.
        let lo = self.samples.partition_point(|&s| s < x - 8.0 * h);
        let hi = self.samples.partition_point(|&s| s <= x + 8.0 * h);
        let sum: f64 = self.samples[lo..hi]
            .iter()
            .map(|s| {
                let u = (x - s) / h;
                (-0.5 * u * u).exp()
            })
            .sum();
        sum / (self.samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn evaluate(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.density(x)).collect()
    }
}

/// Indices of strict interior local maxima of a sampled curve.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .collect()
}

/// Bivariate Gaussian KDE on an `nx × ny` grid spanning the sample range
/// padded by three bandwidths; bandwidth per axis by Silverman's rule for
/// two dimensions, σ n^{−1/6}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kde2d {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Row-major, `density[i * ny + j]` at (x[i], y[j]).
    pub density: Vec<f64>,
    pub bandwidth: [f64; 2],
}

pub fn kde_2d(xs: &[f64], ys: &[f64], nx: usize, ny: usize) -> Result<Kde2d> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("coordinate samples differ in length"));
    }
    if xs.len() < 30 {
        return Err(Error::invalid(format!("KDE needs at least 30 samples, got {}", xs.len())));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::invalid("KDE grid needs at least 2 points per axis"));
    }
    let n = xs.len() as f64;
    let (_, sx) = mean_sd(xs);
    let (_, sy) = mean_sd(ys);
    if !(sx > 0.0 && sy > 0.0) {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    let h = [sx * n.powf(-1.0 / 6.0), sy * n.powf(-1.0 / 6.0)];
    let axis = |v: &[f64], h: f64, m: usize| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
        (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect::<Vec<_>>()
    };
    let gx = axis(xs, h[0], nx);
    let gy = axis(ys, h[1], ny);
    let norm = 1.0 / (n * 2.0 * std::f64::consts::PI * h[0] * h[1]);
    let mut density = vec![0.0; nx * ny];
    // Separable kernel: per-sample weights along each axis, then outer products.
    let mut wx = vec![0.0; nx];
    let mut wy = vec![0.0; ny];
    for (a, b) in xs.iter().zip(ys) {
        for (w, g) in wx.iter_mut().zip(&gx) {
            let u = (g - a) / h[0];
            *w = (-0.5 * u * u).exp();
        }
        for (w, g) in wy.iter_mut().zip(&gy) {
            let u = (g - b) / h[1];
            *w = (-0.5 * u * u).exp();
        }
        for i in 0..nx {
            if wx[i] < 1e-16 {
                continue;
            }
            let row = &mut density[i * ny..(i + 1) * ny];
            for j in 0..ny {
                row[j] += wx[i] * wy[j];
            }
        }
    }
    density.iter_mut().for_each(|d| *d *= norm);
    Ok(Kde2d {
        x: gx,
        y: gy,
        density,
        bandwidth: h,
    })
}

/// Per-bin means of `values` over an `nx × ny` partition of the bounding box
/// of `points`; `None` marks empty bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedMean {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    pub means: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

pub fn binned_mean(points: &[(f64, f64)], values: &[f64], nx: usize, ny: usize) -> Result<BinnedMean> {
    if nx < 2 || ny < 2 {
        return Err(Error::invalid("need at least 2 bins per axis"));
    }
    if points.len() != values.len() {
        return Err(Error::invalid("points and values differ in length"));
    }
    let edges = |sel: &dyn Fn(&(f64, f64)) -> f64, m: usize| {
        let lo = points.iter().map(sel).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        let hi = if hi > lo { hi } else { lo + 1.0 };
        (0..=m).map(|k| lo + (hi - lo) * k as f64 / m as f64).collect::<Vec<_>>()
    };
    let xe = edges(&|p| p.0, nx);
    let ye = edges(&|p| p.1, ny);
    let bin = |e: &[f64], v: f64, m: usize| {
        let w = e[m] - e[0];
        (((v - e[0]) / w * m as f64).floor().max(0.0) as usize).min(m - 1)
    };
    let mut sums = vec![0.0; nx * ny];
    let mut counts = vec![0usize; nx * ny];
    for (p, v) in points.iter().zip(values) {
        let b = bin(&xe, p.0, nx) * ny + bin(&ye, p.1, ny);
        sums[b] += v;
        counts[b] += 1;
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect();
    Ok(BinnedMean {
        x_edges: xe,
        y_edges: ye,
        means,
        counts,
    })
}

/// Mean and standard error of a sample.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    if x.len() < 2 {
        return (x.first().cloned().unwrap_or(f64::NAN), f64::NAN);
    }
    let (m, sd) = mean_sd(x);
    (m, sd / (x.len() as f64).sqrt())
}

/// Sample covariance matrix of row-major observations with `d` columns.
pub fn sample_covariance(rows: &[f64], d: usize) -> DMatrix<f64> {
    let n = rows.len() / d;
    let mut mean = vec![0.0; d];
    for r in rows.chunks(d) {
        for k in 0..d {
            mean[k] += r[k] / n as f64;
        }
    }
    let mut c = DMatrix::zeros(d, d);
    for r in rows.chunks(d) {
        for a in 0..d {
            for b in 0..d {
                c[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    c / (n as f64 - 1.0)
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, sx) = mean_sd(x);
    let (my, sy) = mean_sd(y);
    let n = x.len() as f64;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0);
    cov / (sx * sy)
}

/// Table with one column per regression: coefficients with 95% intervals
/// beneath, then R² and the observation count.
pub fn format_table(title: &str, headers: &[String], columns: &[RegressionResult], rows: &[&str]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let w = 22;
    let _ = write!(s, "{:<16}", "");
    for h in headers {
        let _ = write!(s, "{h:>w$}");
    }
    let _ = writeln!(s);
    for name in rows {
        let _ = write!(s, "{name:<16}");
        for c in columns {
            match c.names.iter().position(|n| n == name) {
                Some(j) => {
                    let _ = write!(s, "{:>w$}", format!("{:.3}", c.coefficients[j]));
                }
                None => {
                    let _ = write!(s, "{:>w$}", "");
                }
            }
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<16}", "");
        for c in columns {
            match c.names.iter().position(|n| n == name) {
                Some(j) => {
                    let _ = write!(s, "{:>w$}", format!("[{:.3}, {:.3}]", c.ci95_low[j], c.ci95_high[j]));
                }
                None => {
                    let _ = write!(s, "{:>w$}", "");
                }
            }
        }
        let _ = writeln!(s);
    }
    let _ = write!(s, "{:<16}", "R²");
    for c in columns {
        let _ = write!(s, "{:>w$}", format!("{:.3}", c.r_squared));
    }
    let _ = writeln!(s);
    let _ = write!(s, "{:<16}", "N");
    for c in columns {
        let _ = write!(s, "{:>w$}", c.n_obs);
    }
    let _ = writeln!(s);
    s
}
