//! Primal network simplex for the dense transportation problem with squared
//! Euclidean costs.
//!
//! The tree bookkeeping (thread/rev-thread lists, successor counts, last
//! successors, block-search pricing and the strongly feasible leaving-arc
//! rule) follows LEMON's `NetworkSimplex`. Arcs of the complete bipartite
//! graph are never materialized: costs are recomputed from the point
//! coordinates and only tree arcs carry flow, so memory is O(n + m).

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const UP: i8 = 1;
const DOWN: i8 = -1;

pub(crate) struct SimplexSolution {
    /// Positive-flow arcs (source, target, mass).
    pub flows: Vec<(usize, usize, f64)>,
    /// Source multipliers f and target multipliers g with f_i + g_j ≤ c_ij.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub pivots: usize,
}

struct Simplex<'a, const D: usize> {
    n: usize,
    m: usize,
    xs: &'a [[f64; D]],
    ys: &'a [[f64; D]],
    art_cost: f64,
    eps: f64,
    supply: Vec<f64>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    dir: Vec<i8>,
    flow: Vec<f64>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    dirty_revs: Vec<usize>,
    block: usize,
    next_arc: usize,
    // pivot state
    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

#[inline(always)]
fn sqdist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        let d = a[k] - b[k];
        s += d * d;
    }
    s
}

impl<'a, const D: usize> Simplex<'a, D> {
    fn new(xs: &'a [[f64; D]], a: &[f64], ys: &'a [[f64; D]], b: &[f64]) -> Self {
        let (n, m) = (xs.len(), ys.len());
        let nodes = n + m;
        let root = nodes;
        let mut max_cost: f64 = 0.0;
        for x in xs {
            for y in ys {
                max_cost = max_cost.max(sqdist(x, y));
            }
        }
        // Any artificial cost above the largest real cost keeps artificial
        // flow out of the optimum on a complete bipartite graph.
        let art_cost = 2.0 * max_cost + 1.0;
        let eps = 1e-12 * (max_cost + 1.0);
        let mut supply = Vec::with_capacity(nodes + 1);
        supply.extend_from_slice(a);
        supply.extend(b.iter().map(|w| -w));
        supply.push(-(a.iter().sum::<f64>() - b.iter().sum::<f64>()));

        let mut s = Self {
            n,
            m,
            xs,
            ys,
            art_cost,
            eps,
            supply,
            pi: vec![0.0; nodes + 1],
            parent: vec![NONE; nodes + 1],
            pred: vec![NONE; nodes + 1],
            dir: vec![UP; nodes + 1],
            flow: vec![0.0; nodes + 1],
            thread: vec![0; nodes + 1],
            rev_thread: vec![0; nodes + 1],
            succ_num: vec![1; nodes + 1],
            last_succ: vec![0; nodes + 1],
            dirty_revs: Vec::new(),
            block: ((n * m) as f64).sqrt().ceil().max(10.0) as usize,
            next_arc: 0,
            in_arc: NONE,
            join: NONE,
            u_in: NONE,
            v_in: NONE,
            u_out: NONE,
            delta: 0.0,
        };
        s.thread[root] = 0;
        s.rev_thread[0] = root;
        s.succ_num[root] = nodes + 1;
        s.last_succ[root] = root - 1;
        for u in 0..nodes {
            s.parent[u] = root;
            s.pred[u] = n * m + u;
            s.thread[u] = u + 1;
            s.rev_thread[u + 1] = u;
            s.last_succ[u] = u;
            if s.supply[u] >= 0.0 {
                s.dir[u] = UP;
                s.pi[u] = 0.0;
                s.flow[u] = s.supply[u];
            } else {
                s.dir[u] = DOWN;
                s.pi[u] = art_cost;
                s.flow[u] = -s.supply[u];
            }
        }
        s
    }

    fn root(&self) -> usize {
        self.n + self.m
    }

    #[inline]
    fn arc_ends(&self, arc: usize) -> (usize, usize) {
        let real = self.n * self.m;
        if arc < real {
            (arc / self.m, self.n + arc % self.m)
        } else {
            let u = arc - real;
            if self.supply[u] >= 0.0 {
                (u, self.root())
            } else {
                (self.root(), u)
            }
        }
    }

    #[inline]
    fn arc_cost(&self, arc: usize) -> f64 {
        let real = self.n * self.m;
        if arc < real {
            sqdist(&self.xs[arc / self.m], &self.ys[arc % self.m])
        } else if self.supply[arc - real] >= 0.0 {
            0.0
        } else {
            self.art_cost
        }
    }

    /// Block search pricing over the implicit arc list.
    fn find_entering(&mut self) -> bool {
        let (n, m) = (self.n, self.m);
        let total = n * m;
        let pi_t = &self.pi[n..n + m];
        let mut min = -self.eps;
        let mut best = NONE;
        let mut cnt = self.block;
        let mut scanned = 0;
        let mut i = self.next_arc / m;
        let mut j0 = self.next_arc % m;
        while scanned < total {
            let x = &self.xs[i];
            let pi_s = self.pi[i];
            let row_len = (m - j0).min(total - scanned);
            let mut j = j0;
            let end = j0 + row_len;
            while j < end {
                // Process up to the next block boundary without branching on it.
                let stop = end.min(j + cnt);
                for jj in j..stop {
                    let c = sqdist(x, &self.ys[jj]) + pi_s - pi_t[jj];
                    if c < min {
                        min = c;
                        best = i * m + jj;
                    }
                }
                let done = stop - j;
                cnt -= done;
                scanned += done;
                j = stop;
                if cnt == 0 {
                    if best != NONE {
                        self.in_arc = best;
                        self.next_arc = (i * m + j) % total;
                        return true;
                    }
                    cnt = self.block;
                }
            }
            j0 = 0;
            i = (i + 1) % n;
        }
        if best != NONE {
            self.in_arc = best;
            self.next_arc = (best + 1) % total;
            return true;
        }
        false
    }

    fn find_join(&mut self) {
        let (mut u, mut v) = self.arc_ends(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving(&mut self) -> bool {
        let (first, second) = self.arc_ends(self.in_arc);
        self.delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.dir[u] == UP && self.flow[u] < self.delta {
                self.delta = self.flow[u];
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != self.join {
            if self.dir[u] == DOWN && self.flow[u] <= self.delta {
                self.delta = self.flow[u];
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        result != 0
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            let (s, t) = self.arc_ends(self.in_arc);
            let mut u = s;
            while u != self.join {
                self.flow[u] -= self.dir[u] as f64 * val;
                u = self.parent[u];
            }
            let mut u = t;
            while u != self.join {
                self.flow[u] += self.dir[u] as f64 * val;
                u = self.parent[u];
            }
        }
    }

    fn update_tree(&mut self) {
        let (u_in, v_in, u_out, join) = (self.u_in, self.v_in, self.u_out, self.join);
        let in_flow = self.delta;
        let in_source = self.arc_ends(self.in_arc).0;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.dir[u_in] = if u_in == in_source { UP } else { DOWN };
            self.flow[u_in] = in_flow;
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }

            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            let mut p = self.parent[u];
            while u != u_in {
                self.pred[u] = self.pred[p];
                self.dir[u] = -self.dir[p];
                self.flow[u] = self.flow[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
                p = self.parent[u];
            }
            self.pred[u_in] = self.in_arc;
            self.dir[u_in] = if u_in == in_source { UP } else { DOWN };
            self.flow[u_in] = in_flow;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }

        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }

        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let u_in = self.u_in;
        let sigma = self.pi[self.v_in] - self.pi[u_in] - self.dir[u_in] as f64 * self.arc_cost(self.in_arc);
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }

    /// Recomputes all potentials from the tree to shed accumulated rounding.
    fn refresh_potentials(&mut self) {
        let root = self.root();
        self.pi[root] = 0.0;
        let mut u = self.thread[root];
        while u != root {
            let c = self.arc_cost(self.pred[u]);
            let p = self.parent[u];
            self.pi[u] = if self.dir[u] == UP { self.pi[p] - c } else { self.pi[p] + c };
            u = self.thread[u];
        }
    }

    fn objective(&self) -> f64 {
        let real = self.n * self.m;
        (0..self.root())
            .filter(|&u| self.pred[u] < real)
            .map(|u| self.flow[u] * self.arc_cost(self.pred[u]))
            .sum()
    }

    fn run(&mut self, max_pivots: usize) -> Result<usize> {
        let mut pivots = 0;
        while self.find_entering() {
            if pivots >= max_pivots {
                return Err(Error::SolverNonConvergence {
                    pivots,
                    objective: self.objective(),
                });
            }
            self.find_join();
            if !self.find_leaving() {
                return Err(Error::invalid("unbounded transport problem"));
            }
            self.change_flow();
            self.update_tree();
            self.update_potential();
            pivots += 1;
            if pivots % 100_000 == 0 {
                self.refresh_potentials();
            }
        }
        self.refresh_potentials();
        Ok(pivots)
    }

    fn solution(self, pivots: usize) -> SimplexSolution {
        let real = self.n * self.m;
        let mut flows: Vec<(usize, usize, f64)> = (0..self.root())
            .filter(|&u| self.pred[u] < real && self.flow[u] > 0.0)
            .map(|u| {
                let arc = self.pred[u];
                (arc / self.m, arc % self.m, self.flow[u])
            })
            .collect();
        flows.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let f = self.pi[..self.n].iter().map(|p| -p).collect();
        let g = self.pi[self.n..self.n + self.m].to_vec();
        SimplexSolution { flows, f, g, pivots }
    }
}

fn pack<const D: usize>(points: &[f64]) -> Vec<[f64; D]> {
    points
        .chunks_exact(D)
        .map(|c| {
            let mut p = [0.0; D];
            p.copy_from_slice(c);
            p
        })
        .collect()
}

fn solve_dim<const D: usize>(x: &[f64], a: &[f64], y: &[f64], b: &[f64], max_pivots: usize) -> Result<SimplexSolution> {
    let xs = pack::<D>(x);
    let ys = pack::<D>(y);
    let mut s = Simplex::new(&xs, a, &ys, b);
    let pivots = s.run(max_pivots)?;
    Ok(s.solution(pivots))
}

/// Solves min Σ π_ij ‖x_i − y_j‖² over couplings of (a, b). Points are flattened.
pub(crate) fn solve(dim: usize, x: &[f64], a: &[f64], y: &[f64], b: &[f64], max_pivots: usize) -> Result<SimplexSolution> {
    match dim {
        1 => solve_dim::<1>(x, a, y, b, max_pivots),
        2 => solve_dim::<2>(x, a, y, b, max_pivots),
        3 => solve_dim::<3>(x, a, y, b, max_pivots),
        d => Err(Error::invalid(format!("network simplex supports dimensions 1 to 3, got {d}"))),
    }
}
