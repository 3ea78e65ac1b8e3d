//! Exact one-dimensional transport: the monotone (north-west corner) coupling
//! of the sorted supports, which is optimal for any convex cost.

use super::simplex::SimplexSolution;

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
    idx
}

pub(crate) fn solve(x: &[f64], a: &[f64], y: &[f64], b: &[f64]) -> SimplexSolution {
    let (n, m) = (x.len(), y.len());
    let sx = argsort(x);
    let sy = argsort(y);
    // Staircase basis: n + m − 1 cells, degenerate ones included so the
    // cells form a spanning tree from which the multipliers follow.
    let mut cells = Vec::with_capacity(n + m - 1);
    let (mut p, mut q) = (0, 0);
    let mut ra = a[sx[0]];
    let mut rb = b[sy[0]];
    loop {
        let t = ra.min(rb);
        cells.push((sx[p], sy[q], t));
        ra -= t;
        rb -= t;
        if p == n - 1 && q == m - 1 {
            break;
        }
        if q == m - 1 || (ra <= rb && p < n - 1) {
            p += 1;
            ra = a[sx[p]];
        } else {
            q += 1;
            rb = b[sy[q]];
        }
    }
    let mut f = vec![f64::NAN; n];
    let mut g = vec![f64::NAN; m];
    f[cells[0].0] = 0.0;
    for &(i, j, _) in &cells {
        let c = (x[i] - y[j]) * (x[i] - y[j]);
        if f[i].is_nan() {
            f[i] = c - g[j];
        } else {
            g[j] = c - f[i];
        }
    }
    let mut flows: Vec<(usize, usize, f64)> = cells.into_iter().filter(|c| c.2 > 0.0).collect();
    flows.sort_unstable_by_key(|&(i, j, _)| (i, j));
    SimplexSolution { flows, f, g, pivots: 0 }
}
