use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Grid};
use crate::linalg;

/// Weighted point cloud in ℝⁿ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    grid: Option<Grid>,
}

/// Node counts per axis and half-width in standard deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nodes: Vec<usize>,
    pub half_width: f64,
}

impl GridSpec {
    pub fn uniform(dim: usize, nodes: usize, half_width: f64) -> Self {
        Self {
            nodes: vec![nodes; dim],
            half_width,
        }
    }
}

impl DiscreteMeasure {
    /// Builds a measure from flattened points, normalizing the weights.
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("measure dimension must be positive"));
        }
        if weights.is_empty() {
            return Err(Error::invalid("empty support"));
        }
        if points.len() != weights.len() * dim {
            return Err(Error::invalid(format!(
                "{} coordinates do not describe {} points in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("measure support".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights are all zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            dim,
            points,
            weights,
            grid: None,
        })
    }

    fn on_grid(grid: Grid, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(grid.dim(), grid.points(), weights)?;
        m.grid = Some(grid);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The tensor grid carrying the support, when the measure was built on one.
    pub fn grid(&self) -> Option<&Grid> {
        self.grid.as_ref()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for (i, w) in self.weights.iter().enumerate() {
            for (k, x) in self.point(i).iter().enumerate() {
                mu[k] += w * x;
            }
        }
        mu
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let d = self.dim;
        let mut c = DMatrix::zeros(d, d);
        for (i, w) in self.weights.iter().enumerate() {
            let p = self.point(i);
            for a in 0..d {
                for b in 0..d {
                    c[(a, b)] += w * (p[a] - mu[a]) * (p[b] - mu[b]);
                }
            }
        }
        c
    }

    /// E‖x‖².
    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.point(i).iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// Weighted mean of a per-point scalar.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// One row per point: coordinates then weight.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header: Vec<String> = (0..self.dim).map(|k| format!("x{k}")).collect();
        header.push("weight".into());
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            for x in self.point(i) {
                write!(out, "{x},")?;
            }
            writeln!(out, "{}", self.weights[i])?;
        }
        Ok(())
    }
}

/// Gaussian N(mean, cov) discretized on a tensor grid centred at the mean,
/// with weights proportional to the density at the nodes.
pub fn build_gaussian_marginal(mean: &[f64], cov: &DMatrix<f64>, spec: &GridSpec) -> Result<DiscreteMeasure> {
    let d = mean.len();
    if cov.nrows() != d || cov.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: cov.nrows(),
        });
    }
    if spec.nodes.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: spec.nodes.len(),
        });
    }
    if spec.nodes.iter().any(|&n| n < 3) {
        return Err(Error::invalid("each axis needs at least 3 nodes"));
    }
    let precision = linalg::spd_inverse(cov, "covariance")?;
    let axes = (0..d)
        .map(|k| Axis::centered(mean[k], spec.half_width * cov[(k, k)].sqrt(), spec.nodes[k]))
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid::new(axes)?;
    let mut x = vec![0.0; d];
    let mut logs = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        grid.coords_into(i, &mut x);
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += (x[a] - mean[a]) * precision[(a, b)] * (x[b] - mean[b]);
            }
        }
        logs.push(-0.5 * q);
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights = logs.into_iter().map(|l| (l - top).exp()).collect();
    DiscreteMeasure::on_grid(grid, weights)
}

/// Normalized measure on an arbitrary support given as flattened points.
pub fn build_value_marginal(dim: usize, values: Vec<f64>, weights: Vec<f64>) -> Result<DiscreteMeasure> {
    DiscreteMeasure::new(dim, values, weights)
}

/// `m` log-equispaced nodes covering `mu ± half_width·sigma` in log space, weighted by the
/// normal density of the log value. Returns (values, weights).
pub fn lognormal_nodes(mu: f64, sigma: f64, half_width: f64, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if m < 2 || !(sigma > 0.0) || !(half_width > 0.0) {
        return Err(Error::invalid("lognormal grid needs m ≥ 2, sigma > 0 and a positive half-width"));
    }
    let axis = Axis::centered(mu, half_width * sigma, m)?;
    let values = (0..m).map(|k| axis.node(k).exp()).collect();
    let weights = (0..m)
        .map(|k| {
            let z = (axis.node(k) - mu) / sigma;
            (-0.5 * z * z).exp()
        })
        .collect();
    Ok((values, weights))
}

/// Stock and call payoff pairs (v, (v−K)⁺) on a lognormal value grid.
pub fn call_payoff_marginal(mu: f64, sigma: f64, half_width: f64, m: usize, strike: f64) -> Result<DiscreteMeasure> {
    let (values, weights) = lognormal_nodes(mu, sigma, half_width, m)?;
    let points = values.iter().flat_map(|&v| [v, (v - strike).max(0.0)]).collect();
    build_value_marginal(2, points, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_node_gaussian_peaks_in_the_middle() {
        let m = build_gaussian_marginal(&[0.0], &DMatrix::from_element(1, 1, 1.0), &GridSpec::uniform(1, 3, 1.0)).unwrap();
        assert_eq!(m.points(), &[-1.0, 0.0, 1.0]);
        assert!(m.weights()[1] > m.weights()[0]);
        assert!((m.weights()[0] - m.weights()[2]).abs() < 1e-15);
    }

    #[test]
    fn non_spd_covariance_is_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = build_gaussian_marginal(&[0.0, 0.0], &cov, &GridSpec::uniform(2, 5, 4.0)).unwrap_err();
        assert!(matches!(err, Error::NotSpd { .. }));
    }

    #[test]
    fn value_marginal_normalizes() {
        let m = build_value_marginal(1, vec![0.0, 1.0], vec![3.0, 3.0]).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);
        let p = build_value_marginal(2, vec![1.0, 2.0], vec![0.2]).unwrap();
        assert_eq!(p.weights(), &[1.0]);
        assert!(build_value_marginal(1, vec![], vec![]).is_err());
        assert!(build_value_marginal(1, vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn call_payoff_second_coordinate() {
        let sigma: f64 = 0.2;
        let mu = 100f64.ln() - sigma * sigma / 2.0;
        let m = call_payoff_marginal(mu, sigma, 3.3, 1001, 100.0).unwrap();
        assert_eq!(m.len(), 1001);
        for i in 0..m.len() {
            let p = m.point(i);
            assert_eq!(p[1], (p[0] - 100.0).max(0.0));
        }
        let mean = m.mean();
        assert!((mean[0] - 100.0).abs() < 0.1);
    }
}
