//! Tensor-product grids in up to three dimensions.
//!
//! Nodes are stored row-major: the last axis varies fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub step: f64,
    pub len: usize,
}

impl Axis {
    /// Equally spaced nodes covering `center ± half_width`.
    pub fn centered(center: f64, half_width: f64, len: usize) -> Result<Self> {
        if len < 2 || !(half_width > 0.0) || !center.is_finite() {
            return Err(Error::invalid(format!(
                "axis needs at least 2 nodes and a positive half-width (got {len} nodes, half-width {half_width})"
            )));
        }
        Ok(Self {
            lo: center - half_width,
            step: 2.0 * half_width / (len - 1) as f64,
            len,
        })
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    pub fn hi(&self) -> f64 {
        self.node(self.len - 1)
    }

    /// Fractional position of `x` in node units, clamped to the axis, and whether clamping happened.
    #[inline]
    fn locate(&self, x: f64) -> (f64, bool) {
        let s = (x - self.lo) / self.step;
        let top = (self.len - 1) as f64;
        if s < 0.0 {
            (0.0, true)
        } else if s > top {
            (top, true)
        } else {
            (s, false)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Axis>", into = "Vec<Axis>")]
pub struct Grid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    len: usize,
}

impl TryFrom<Vec<Axis>> for Grid {
    type Error = Error;

    fn try_from(axes: Vec<Axis>) -> Result<Self> {
        Grid::new(axes)
    }
}

impl From<Grid> for Vec<Axis> {
    fn from(g: Grid) -> Self {
        g.axes
    }
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(Error::invalid(format!(
                "grids support 1 to {MAX_DIM} axes, got {}",
                axes.len()
            )));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.len < 2 || !(a.step > 0.0) || !a.lo.is_finite() {
                return Err(Error::invalid(format!("axis {k} is malformed: {a:?}")));
            }
        }
        let mut strides = vec![1; axes.len()];
        for k in (0..axes.len() - 1).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].len;
        }
        let len = strides[0] * axes[0].len;
        Ok(Self { axes, strides, len })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn stride(&self, k: usize) -> usize {
        self.strides[k]
    }

    pub fn steps(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.step).collect()
    }

    #[inline]
    pub fn unravel(&self, flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rem = flat;
        for (k, s) in self.strides.iter().enumerate() {
            idx[k] = rem / s;
            rem %= s;
        }
        idx
    }

    #[inline]
    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    #[inline]
    pub fn coords_into(&self, flat: usize, out: &mut [f64]) {
        let idx = self.unravel(flat);
        for (k, a) in self.axes.iter().enumerate() {
            out[k] = a.node(idx[k]);
        }
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(flat, &mut out);
        out
    }

    /// All node coordinates, flattened point by point.
    pub fn points(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len * d];
        for (i, chunk) in out.chunks_exact_mut(d).enumerate() {
            self.coords_into(i, chunk);
        }
        out
    }

    /// Nearest node to `y`; the flag reports whether `y` was outside the grid box.
    pub fn nearest(&self, y: &[f64]) -> (usize, bool) {
        let mut flat = 0;
        let mut clamped = false;
        for (k, a) in self.axes.iter().enumerate() {
            let (s, c) = a.locate(y[k]);
            clamped |= c;
            flat += (s.round() as usize).min(a.len - 1) * self.strides[k];
        }
        (flat, clamped)
    }

    /// Multilinear interpolation of a field with `comps` values per node.
    /// Points outside the box are clamped to it; the return value reports clamping.
    pub fn interpolate_into(&self, values: &[f64], comps: usize, y: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0f64; MAX_DIM];
        let mut clamped = false;
        for (k, a) in self.axes.iter().enumerate() {
            let (s, c) = a.locate(y[k]);
            clamped |= c;
            let i0 = (s.floor() as usize).min(a.len - 2);
            base[k] = i0;
            frac[k] = s - i0 as f64;
        }
        out[..comps].fill(0.0);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in 0..d {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat += (base[k] + bit) * self.strides[k];
            }
            if w == 0.0 {
                continue;
            }
            for c in 0..comps {
                out[c] += w * values[flat * comps + c];
            }
        }
        clamped
    }

    pub fn interpolate(&self, values: &[f64], y: &[f64]) -> (f64, bool) {
        let mut out = [0.0];
        let clamped = self.interpolate_into(values, 1, y, &mut out);
        (out[0], clamped)
    }

    /// Flat indices of the nodes inside the central `fraction` of every axis.
    pub fn interior(&self, fraction: f64) -> Vec<usize> {
        let margin = (1.0 - fraction.clamp(0.0, 1.0)) / 2.0;
        let bounds: Vec<(f64, f64)> = self
            .axes
            .iter()
            .map(|a| {
                let w = a.hi() - a.lo;
                (a.lo + margin * w - 1e-9 * a.step, a.hi() - margin * w + 1e-9 * a.step)
            })
            .collect();
        (0..self.len)
            .filter(|&i| {
                let idx = self.unravel(i);
                bounds
                    .iter()
                    .enumerate()
                    .all(|(k, &(lo, hi))| {
                        let x = self.axes[k].node(idx[k]);
                        x >= lo && x <= hi
                    })
            })
            .collect()
    }

    /// Whether node `flat` has at least `band` neighbours on both sides along every axis.
    pub fn has_margin(&self, flat: usize, band: usize) -> bool {
        let idx = self.unravel(flat);
        self.axes
            .iter()
            .enumerate()
            .all(|(k, a)| idx[k] >= band && idx[k] + band < a.len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> Grid {
        Grid::new(vec![
            Axis::centered(0.0, 1.0, 5).unwrap(),
            Axis::centered(1.0, 2.0, 3).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn ravel_roundtrip() {
        let g = grid2();
        assert_eq!(g.len(), 15);
        for i in 0..g.len() {
            let idx = g.unravel(i);
            assert_eq!(g.ravel(&idx[..2]), i);
        }
        assert_eq!(g.coords(0), vec![-1.0, -1.0]);
        assert_eq!(g.coords(14), vec![1.0, 3.0]);
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_functions() {
        let g = grid2();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let vals: Vec<f64> = (0..g.len()).map(|i| f(&g.coords(i))).collect();
        for y in [[0.3, 0.7], [-0.99, 2.5], [0.0, 1.0]] {
            let (v, c) = g.interpolate(&vals, &y);
            assert!(!c);
            assert!((v - f(&y)).abs() < 1e-12);
        }
        let (_, c) = g.interpolate(&vals, &[2.0, 0.0]);
        assert!(c);
    }

    #[test]
    fn nearest_and_interior() {
        let g = grid2();
        let (i, c) = g.nearest(&[0.26, 2.9]);
        assert!(!c);
        assert_eq!(g.coords(i), vec![0.5, 3.0]);
        let inner = g.interior(0.5);
        assert!(inner.iter().all(|&i| g.coords(i)[0].abs() <= 0.5));
        assert_eq!(inner.len(), 3);
    }
}
