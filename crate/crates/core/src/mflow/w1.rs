//! Exact first Wasserstein distance by the transportation simplex, plus the
//! closed form on the line.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest slice the exact solver accepts.
pub const W1_MAX_POINTS: usize = 512;

const MASS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transport {
    pub value: f64,
    /// Nonzero entries (i, j, mass) of an optimal plan, i indexing the first measure.
    pub plan: Vec<(usize, usize, f64)>,
}

fn check_probability(mu: &[f64], what: &str) -> Result<()> {
    if mu.iter().any(|&x| !x.is_finite() || x < -1e-15) {
        return Err(Error::Unnormalized(format!("{what} has negative or non-finite entries")));
    }
    let total: f64 = mu.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::Unnormalized(format!("{what} has total mass {total}")));
    }
    Ok(())
}

/// W1 between two probability vectors on a common finite metric space
/// with row-major distance matrix `dist`.
pub fn w1(dist: &[f64], mu1: &[f64], mu2: &[f64]) -> Result<Transport> {
    let m = mu1.len();
    if mu2.len() != m || dist.len() != m * m {
        return Err(Error::Shape(format!(
            "distance matrix of {} entries for measures of length {} and {}",
            dist.len(),
            m,
            mu2.len()
        )));
    }
    check_probability(mu1, "first measure")?;
    check_probability(mu2, "second measure")?;
    transport(|i, j| dist[i * m + j], mu1, mu2)
}

/// Optimal transport between `a` and `b` for an arbitrary cost `cost(i, j)`;
/// both must be probability vectors.
pub fn transport(cost: impl Fn(usize, usize) -> f64, a: &[f64], b: &[f64]) -> Result<Transport> {
    if a.len() > W1_MAX_POINTS || b.len() > W1_MAX_POINTS {
        return Err(Error::TooLarge(a.len().max(b.len())));
    }
    check_probability(a, "supply")?;
    check_probability(b, "demand")?;
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let supply: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let mut demand: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    // balance exactly so the north-west start closes
    let gap = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
    let last = demand.len() - 1;
    demand[last] += gap;
    let c: Vec<f64> = rows.iter().flat_map(|&i| cols.iter().map(move |&j| (i, j))).map(|(i, j)| cost(i, j)).collect();
    let sol = Simplex::solve(&c, supply, demand);
    let mut plan = Vec::new();
    let mut value = 0.0;
    for (r, s, x) in sol {
        if x > 0.0 {
            value += x * c[r * cols.len() + s];
            plan.push((rows[r], cols[s], x));
        }
    }
    plan.sort_by_key(|p| (p.0, p.1));
    Ok(Transport { value, plan })
}

/// Basis of the transportation simplex: a spanning tree on rows ∪ columns.
struct Simplex {
    m: usize,
    n: usize,
    /// Basic cells with their flows.
    cells: Vec<(usize, usize, f64)>,
}

impl Simplex {
    fn solve(c: &[f64], mut supply: Vec<f64>, mut demand: Vec<f64>) -> Vec<(usize, usize, f64)> {
        let (m, n) = (supply.len(), demand.len());
        let mut cells = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        // north-west corner: exactly m + n − 1 cells, degenerate ones kept at zero
        loop {
            let x = supply[i].min(demand[j]).max(0.0);
            cells.push((i, j, x));
            supply[i] -= x;
            demand[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && supply[i] <= demand[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        let scale = c.iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1e-300);
        let mut s = Simplex { m, n, cells };
        let mut degenerate_run = 0usize;
        loop {
            let (u, v) = s.potentials(c);
            let bland = degenerate_run > 2 * (m + n);
            let mut enter: Option<(usize, usize, f64)> = None;
            'scan: for i in 0..m {
                for j in 0..n {
                    let r = c[i * n + j] - u[i] - v[j];
                    if r < -1e-12 * scale {
                        if bland {
                            enter = Some((i, j, r));
                            break 'scan;
                        }
                        if enter.is_none_or(|e| r < e.2) {
                            enter = Some((i, j, r));
                        }
                    }
                }
            }
            let Some((ei, ej, _)) = enter else { break };
            let theta = s.pivot(ei, ej);
            degenerate_run = if theta > 0.0 { 0 } else { degenerate_run + 1 };
        }
        s.cells
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        // nodes 0..m are rows, m..m+n columns; edges carry the cell index
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j, _)) in self.cells.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn potentials(&self, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.m + self.n];
        pot[0] = 0.0;
        let mut stack = vec![0];
        while let Some(a) = stack.pop() {
            for &(b, k) in &adj[a] {
                if pot[b].is_nan() {
                    let (i, j, _) = self.cells[k];
                    // c_ij = u_i + v_j on basic cells
                    pot[b] = c[i * self.n + j] - pot[a];
                    stack.push(b);
                }
            }
        }
        (pot[..self.m].to_vec(), pot[self.m..].to_vec())
    }

    /// Brings cell (ei, ej) into the basis; returns the mass moved.
    fn pivot(&mut self, ei: usize, ej: usize) -> f64 {
        let adj = self.adjacency();
        // tree path from the column node back to the row node
        let target = ei;
        let start = self.m + ej;
        let mut parent = vec![usize::MAX; self.m + self.n];
        let mut via = vec![usize::MAX; self.m + self.n];
        parent[start] = start;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(a) = queue.pop_front() {
            if a == target {
                break;
            }
            for &(b, k) in &adj[a] {
                if parent[b] == usize::MAX {
                    parent[b] = a;
                    via[b] = k;
                    queue.push_back(b);
                }
            }
        }
        // walking from the row back to the column, cells alternate −, +, −, ...
        let mut path = Vec::new();
        let mut node = target;
        while node != start {
            path.push(via[node]);
            node = parent[node];
        }
        let mut leave = path[0];
        for &k in path.iter().step_by(2).skip(1) {
            let (li, lj, lx) = self.cells[leave];
            let (ci, cj, cx) = self.cells[k];
            if cx < lx || (cx == lx && (ci, cj) < (li, lj)) {
                leave = k;
            }
        }
        let theta = self.cells[leave].2;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                self.cells[k].2 -= theta;
            } else {
                self.cells[k].2 += theta;
            }
        }
        self.cells[leave] = (ei, ej, theta);
        theta
    }
}

/// W1 between weighted point sets on the real line: ∫|F − G|.
pub fn w1_line(x: &[f64], a: &[f64], y: &[f64], b: &[f64]) -> f64 {
    let mut pts: Vec<(f64, f64)> = x.iter().zip(a).map(|(&p, &w)| (p, w)).collect();
    pts.extend(y.iter().zip(b).map(|(&p, &w)| (p, -w)));
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut cdf = 0.0;
    let mut total = 0.0;
    for k in 0..pts.len() - 1 {
        cdf += pts[k].1;
        total += cdf.abs() * (pts[k + 1].0 - pts[k].0);
    }
    total
}

/// W1 on the line when both supports are already sorted; linear time.
pub fn w1_line_sorted(x: &[f64], a: &[f64], y: &[f64], b: &[f64]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut cdf = 0.0_f64;
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    while i < x.len() || j < y.len() {
        let take_x = j >= y.len() || (i < x.len() && x[i] <= y[j]);
        let p = if take_x { x[i] } else { y[j] };
        if let Some(q) = prev {
            total += cdf.abs() * (p - q);
        }
        if take_x && j < y.len() && x[i] == y[j] {
            // shared atom: net mass first so equal measures cancel exactly
            cdf += a[i] - b[j];
            i += 1;
            j += 1;
        } else if take_x {
            cdf += a[i];
            i += 1;
        } else {
            cdf -= b[j];
            j += 1;
        }
        prev = Some(p);
    }
    total
}

/// Monotone (quantile) coupling of two sorted weighted point sets; optimal for
/// every convex cost of the displacement.
pub fn line_coupling(a: &[f64], b: &[f64]) -> Vec<(usize, usize, f64)> {
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a.first().copied().unwrap_or(0.0), b.first().copied().unwrap_or(0.0));
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        let x = ra.min(rb);
        if x > 0.0 {
            out.push((i, j, x));
        }
        ra -= x;
        rb -= x;
        if ra <= 1e-15 && i + 1 < a.len() {
            i += 1;
            ra = a[i];
        } else if rb <= 1e-15 && j + 1 < b.len() {
            j += 1;
            rb = b[j];
        } else if ra <= 1e-15 || rb <= 1e-15 {
            break;
        }
    }
    out
}

/// Brute-force optimum over every vertex of the transportation polytope; for
/// tiny instances only.
pub fn w1_enumerate(dist: &[f64], mu1: &[f64], mu2: &[f64]) -> f64 {
    let m = mu1.len();
    // mass shared by a point stays in place on a metric space
    let rows: Vec<(usize, f64)> = (0..m).filter(|&i| mu1[i] > mu2[i]).map(|i| (i, mu1[i] - mu2[i])).collect();
    let cols: Vec<(usize, f64)> = (0..m).filter(|&j| mu2[j] > mu1[j]).map(|j| (j, mu2[j] - mu1[j])).collect();
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let (p, q) = (rows.len(), cols.len());
    let cells: Vec<(usize, usize)> = (0..p).flat_map(|i| (0..q).map(move |j| (i, j))).collect();
    let k = p + q - 1;
    let mut best = f64::INFINITY;
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        if let Some(cost) = vertex_cost(&pick, &cells, &rows, &cols, dist, m) {
            best = best.min(cost);
        }
        // next k-subset in lexicographic order
        let mut t = k;
        while t > 0 && pick[t - 1] == cells.len() - k + t - 1 {
            t -= 1;
        }
        if t == 0 {
            break;
        }
        pick[t - 1] += 1;
        for s in t..k {
            pick[s] = pick[s - 1] + 1;
        }
    }
    best
}

/// Solves the basic solution on a chosen cell set by leaf elimination; None if
/// the set is not a spanning tree or the solution is infeasible.
fn vertex_cost(
    pick: &[usize],
    cells: &[(usize, usize)],
    rows: &[(usize, f64)],
    cols: &[(usize, f64)],
    dist: &[f64],
    m: usize,
) -> Option<f64> {
    let (p, q) = (rows.len(), cols.len());
    let mut rem: Vec<f64> = rows.iter().map(|r| r.1).chain(cols.iter().map(|c| c.1)).collect();
    let mut open: Vec<bool> = vec![true; pick.len()];
    let mut degree = vec![0usize; p + q];
    for &c in pick {
        degree[cells[c].0] += 1;
        degree[p + cells[c].1] += 1;
    }
    let mut cost = 0.0;
    for _ in 0..pick.len() {
        let leaf = (0..p + q).find(|&v| degree[v] == 1)?;
        let e = (0..pick.len()).find(|&e| {
            open[e] && {
                let (i, j) = cells[pick[e]];
                i == leaf || p + j == leaf
            }
        })?;
        let (i, j) = cells[pick[e]];
        let x = rem[leaf];
        if x < -1e-12 {
            return None;
        }
        let other = if leaf == i { p + j } else { i };
        rem[leaf] = 0.0;
        rem[other] -= x;
        degree[i] -= 1;
        degree[p + j] -= 1;
        open[e] = false;
        cost += x.max(0.0) * dist[rows[i].0 * m + cols[j].0];
    }
    if rem.iter().any(|r| r.abs() > 1e-9) {
        return None;
    }
    Some(cost)
}
