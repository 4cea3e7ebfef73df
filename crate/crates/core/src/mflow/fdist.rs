//! Upper bounds on the F-distance between metric flow pairs, and the
//! time-shift, scaling and base-point experiments built on them.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::w1::{line_coupling, transport, w1_line_sorted};
use super::{bad_set, time_cells, FiniteMetricFlow, MeasureFlow};
use crate::{Error, Result};

/// Common space a pair of slices is embedded in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ZSpace {
    /// Both slices placed on one line.
    Line { coords1: Vec<f64>, coords2: Vec<f64> },
    /// Points 0..n1 carry the first slice, n1..n1+n2 the second.
    Metric { n1: usize, n2: usize, dist: Vec<f64> },
}

impl ZSpace {
    fn w1(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            ZSpace::Line { coords1, coords2 } => Ok(w1_line_sorted(coords1, a, coords2, b)),
            ZSpace::Metric { n1, n2, dist } => {
                let n = n1 + n2;
                let mut pa = vec![0.0; n];
                let mut pb = vec![0.0; n];
                pa[..*n1].copy_from_slice(a);
                pb[*n1..].copy_from_slice(b);
                Ok(transport(|i, j| dist[i * n + j], &pa, &pb)?.value)
            }
        }
    }

    fn sizes(&self) -> (usize, usize) {
        match self {
            ZSpace::Line { coords1, coords2 } => (coords1.len(), coords2.len()),
            ZSpace::Metric { n1, n2, .. } => (*n1, *n2),
        }
    }

    fn transposed(&self) -> Self {
        match self {
            ZSpace::Line { coords1, coords2 } => ZSpace::Line { coords1: coords2.clone(), coords2: coords1.clone() },
            ZSpace::Metric { n1, n2, dist } => {
                let n = n1 + n2;
                let map = |i: usize| if i < *n2 { n1 + i } else { i - n2 };
                let mut d = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        d[i * n + j] = dist[map(i) * n + map(j)];
                    }
                }
                ZSpace::Metric { n1: *n2, n2: *n1, dist: d }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSlice {
    pub time: f64,
    pub z: ZSpace,
    /// Sparse coupling (x¹, x², mass) of the two measures in force at `time`.
    pub coupling: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub slices: Vec<CorrespondenceSlice>,
}

impl Correspondence {
    /// Line embeddings with both slices centred at the origin and the
    /// monotone coupling of the measures, on every time of `times`.
    pub fn centred_lines(
        flow1: &FiniteMetricFlow,
        mu1: &MeasureFlow,
        flow2: &FiniteMetricFlow,
        mu2: &MeasureFlow,
        times: &[f64],
    ) -> Result<Self> {
        let centred = |f: &FiniteMetricFlow, t: f64| -> Result<Vec<f64>> {
            let s = &f.slices[f.slice_at(t)?];
            let c = s.coords.as_ref().ok_or_else(|| Error::Precondition("slice has no line coordinates".into()))?;
            let mid = 0.5 * (c[0] + c[c.len() - 1]);
            Ok(c.iter().map(|x| x - mid).collect())
        };
        let mut slices = Vec::with_capacity(times.len());
        for &t in times {
            let (a, b) = match (mu1.at(t), mu2.at(t)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Range(format!("measures undefined at {t}"))),
            };
            slices.push(CorrespondenceSlice {
                time: t,
                z: ZSpace::Line { coords1: centred(flow1, t)?, coords2: centred(flow2, t)? },
                coupling: line_coupling(a, b),
            });
        }
        Ok(Self { slices })
    }

    /// Correspondence between the pairs taken in the opposite order.
    pub fn transposed(&self) -> Self {
        Self {
            slices: self
                .slices
                .iter()
                .map(|s| CorrespondenceSlice {
                    time: s.time,
                    z: s.z.transposed(),
                    coupling: s.coupling.iter().map(|&(x, y, w)| (y, x, w)).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FDistanceReport {
    /// Upper bound on the F-distance.
    pub value: f64,
    /// Cost threshold of the witnessing exception set.
    pub threshold: f64,
    pub exception_times: Vec<f64>,
    pub exception_measure: f64,
    /// Merged time grid the pairs were compared on.
    pub times: Vec<f64>,
    /// Largest coupled transport cost over all s ≤ t.
    pub max_cost: f64,
}

/// Union of the two grids over their common window.
pub fn merged_times(
    flow1: &FiniteMetricFlow,
    mu1: &MeasureFlow,
    flow2: &FiniteMetricFlow,
    mu2: &MeasureFlow,
) -> Result<Vec<f64>> {
    let lo = flow1.first_time().max(flow2.first_time()).max(mu1.times[0]).max(mu2.times[0]);
    let hi = flow1.last_time().min(flow2.last_time()).min(*mu1.times.last().unwrap()).min(*mu2.times.last().unwrap());
    if hi < lo {
        return Err(Error::Range(format!("flows share no time window ({lo} > {hi})")));
    }
    let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    let mut t: Vec<f64> =
        flow1.times.iter().chain(&flow2.times).cloned().filter(|&x| x >= lo - tol && x <= hi + tol).collect();
    t.push(lo);
    t.sort_by(|a, b| a.total_cmp(b));
    t.dedup_by(|a, b| (*a - *b).abs() <= tol);
    Ok(t)
}

/// Kernel rows of one flow from a fixed top slice, extended downward one
/// slice at a time. Stored transposed so each row is contiguous.
struct RowCursor<'a> {
    flow: &'a FiniteMetricFlow,
    at: usize,
    rows_t: DMatrix<f64>,
}

impl<'a> RowCursor<'a> {
    fn new(flow: &'a FiniteMetricFlow, top: usize) -> Self {
        let m = flow.slices[top].len();
        Self { flow, at: top, rows_t: DMatrix::identity(m, m) }
    }
    fn descend(&mut self, to: usize, kt: &[DMatrix<f64>]) {
        while self.at > to {
            self.at -= 1;
            self.rows_t = &kt[self.at] * &self.rows_t;
        }
    }
    fn row(&self, x: usize) -> &[f64] {
        let m = self.rows_t.nrows();
        &self.rows_t.as_slice()[x * m..(x + 1) * m]
    }
    fn width(&self) -> usize {
        self.flow.slices[self.at].len()
    }
}

/// Smallest r found such that a time set E with |E| ≤ r² leaves
/// ∫ W1^{Z_s}(ν¹_{x¹|s}, ν²_{x²|s}) dq_t ≤ r for all s ≤ t outside E.
/// The correspondence supplies Z and q at every merged grid time.
pub fn f_distance_upper(
    flow1: &FiniteMetricFlow,
    mu1: &MeasureFlow,
    flow2: &FiniteMetricFlow,
    mu2: &MeasureFlow,
    corr: &Correspondence,
) -> Result<FDistanceReport> {
    let times = merged_times(flow1, mu1, flow2, mu2)?;
    let mut zs = Vec::with_capacity(times.len());
    let mut missing = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let tol = 1e-9 * (1.0 + t.abs());
        let idx = corr.slices.partition_point(|c| c.time < t - tol);
        match corr.slices.get(idx) {
            Some(c) if (c.time - t).abs() <= tol => zs.push(c),
            _ => missing.push(k),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingSlices(missing));
    }
    let k1: Vec<usize> = times.iter().map(|&t| flow1.slice_at(t)).collect::<Result<_>>()?;
    let k2: Vec<usize> = times.iter().map(|&t| flow2.slice_at(t)).collect::<Result<_>>()?;
    for (k, z) in zs.iter().enumerate() {
        if z.z.sizes() != (flow1.slices[k1[k]].len(), flow2.slices[k2[k]].len()) {
            return Err(Error::Shape(format!("correspondence at {} does not match the slices", times[k])));
        }
    }
    let kt1: Vec<DMatrix<f64>> = flow1.kernels.iter().map(|k| k.matrix().transpose()).collect();
    let kt2: Vec<DMatrix<f64>> = flow2.kernels.iter().map(|k| k.matrix().transpose()).collect();

    // cost[j][i] for s = times[i] ≤ t = times[j]
    let cost: Vec<Vec<f64>> = (0..times.len())
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let mut c1 = RowCursor::new(flow1, k1[j]);
            let mut c2 = RowCursor::new(flow2, k2[j]);
            let mut out = vec![0.0; j + 1];
            for i in (0..=j).rev() {
                c1.descend(k1[i], &kt1);
                c2.descend(k2[i], &kt2);
                debug_assert_eq!(zs[i].z.sizes(), (c1.width(), c2.width()));
                let mut total = 0.0;
                for &(x, y, w) in &zs[j].coupling {
                    total += w * zs[i].z.w1(c1.row(x), c2.row(y))?;
                }
                out[i] = total;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let cells = time_cells(&times);
    let mut levels: Vec<f64> = cost.iter().flatten().cloned().collect();
    levels.push(0.0);
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let max_cost = *levels.last().unwrap();

    let eval = |theta: f64| {
        let e = cover(&cost, &cells, theta);
        let m = e.iter().fold(0.0, |acc, &k| acc + cells[k]);
        (theta.max(m.sqrt()), e, m)
    };
    // the exception measure only shrinks as the threshold rises; bisect for the crossing
    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    let mut best = eval(levels[hi]);
    let mut best_theta = levels[hi];
    while lo < hi {
        let mid = (lo + hi) / 2;
        let r = eval(levels[mid]);
        let crossed = r.2.sqrt() <= levels[mid];
        if r.0 < best.0 {
            best_theta = levels[mid];
            best = r;
        }
        if crossed {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let r = eval(levels[lo]);
    if r.0 < best.0 {
        best_theta = levels[lo];
        best = r;
    }
    let (value, e, measure) = best;
    Ok(FDistanceReport {
        value,
        threshold: best_theta,
        exception_times: e.iter().map(|&k| times[k]).collect(),
        exception_measure: measure,
        times,
        max_cost,
    })
}

/// Greedy weighted vertex cover of the pairs whose cost exceeds `theta`;
/// a pair (t, t) can only be covered by t itself.
fn cover(cost: &[Vec<f64>], cells: &[f64], theta: f64) -> Vec<usize> {
    let n = cost.len();
    let mut adj = vec![vec![false; n]; n];
    let mut deg = vec![0usize; n];
    let mut taken = vec![false; n];
    for j in 0..n {
        for i in 0..=j {
            if cost[j][i] > theta {
                if i == j {
                    taken[j] = true;
                } else {
                    adj[i][j] = true;
                    adj[j][i] = true;
                    deg[i] += 1;
                    deg[j] += 1;
                }
            }
        }
    }
    let remove = |v: usize, adj: &mut Vec<Vec<bool>>, deg: &mut Vec<usize>| {
        for u in 0..n {
            if adj[v][u] {
                adj[v][u] = false;
                adj[u][v] = false;
                deg[u] -= 1;
            }
        }
        deg[v] = 0;
    };
    for v in (0..n).filter(|&v| taken[v]) {
        remove(v, &mut adj, &mut deg);
    }
    loop {
        // most edges per unit of time measure; free vertices first
        let pick = (0..n).filter(|&v| deg[v] > 0).max_by(|&a, &b| {
            let score = |v: usize| if cells[v] > 0.0 { deg[v] as f64 / cells[v] } else { f64::INFINITY };
            score(a).total_cmp(&score(b)).then(b.cmp(&a))
        });
        match pick {
            Some(v) => {
                taken[v] = true;
                remove(v, &mut adj, &mut deg);
            }
            None => break,
        }
    }
    (0..n).filter(|&v| taken[v]).collect()
}

/// Points (slice, index) at times within r² of the base time whose kernels at
/// t₀ − r² lie within W1 distance r of the base kernel.
pub fn parabolic_ball(flow: &FiniteMetricFlow, x0: (usize, usize), r: f64) -> Result<Vec<(usize, usize)>> {
    let (k0, i0) = x0;
    if k0 >= flow.len() || i0 >= flow.slices[k0].len() {
        return Err(Error::Range(format!("base point {x0:?} is not in the flow")));
    }
    let t0 = flow.times[k0];
    let kb = flow.slice_at(t0 - r * r)?;
    let base = flow.kernel_row(k0, i0, kb);
    let slice = &flow.slices[kb];
    let mut out = Vec::new();
    for k in kb..flow.len() {
        if (flow.times[k] - t0).abs() > r * r + 1e-12 {
            continue;
        }
        for y in 0..flow.slices[k].len() {
            let row = flow.kernel_row(k, y, kb);
            let d = match &slice.coords {
                Some(c) => w1_line_sorted(c, &base, c, &row),
                None => super::w1(&slice.dist, &base, &row)?.value,
            };
            if d < r {
                out.push((k, y));
            }
        }
    }
    Ok(out)
}

/// Builds a flow with exact kernels on any requested time grid.
pub type FlowBuilder<'a> = &'a dyn Fn(&[f64]) -> Result<FiniteMetricFlow>;

/// F-distance bound between two flow pairs with centred line correspondences.
pub fn line_distance(
    f1: &FiniteMetricFlow,
    m1: &MeasureFlow,
    f2: &FiniteMetricFlow,
    m2: &MeasureFlow,
) -> Result<FDistanceReport> {
    let times = merged_times(f1, m1, f2, m2)?;
    let corr = Correspondence::centred_lines(f1, m1, f2, m2, &times)?;
    f_distance_upper(f1, m1, f2, m2, &corr)
}

/// Based pair 𝒳^{−t₀,λ} on the rescaled grid `grid` (ending at 0), with the
/// kernel of point `x` at t₀ as its measure.
fn based_pair(
    build: FlowBuilder,
    t0: f64,
    x: usize,
    lambda: f64,
    grid: &[f64],
) -> Result<(FiniteMetricFlow, MeasureFlow)> {
    let times: Vec<f64> = grid.iter().map(|g| t0 + g / (lambda * lambda)).collect();
    let f = build(&times)?.time_shift(-t0).rescale(lambda)?;
    let top = f.len() - 1;
    let mu = MeasureFlow::from_point(&f, top, x)?;
    Ok((f, mu))
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) || grid.last() != Some(&0.0) {
        return Err(Error::Validation("rescaled grid must increase to 0".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentReport {
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub exception_measures: Vec<f64>,
    /// (ε, whether the last value is below ε).
    pub below: Vec<(f64, bool)>,
}

/// Compares the rescalings 𝒳^{−t₀,λ} and 𝒳^{−t₁,λ} based at (t₀, x₀) and
/// (t₁, y₀) for each λ_j, both built exactly on the rescaled grid.
pub fn tangent_flow_experiment(
    build: FlowBuilder,
    x0: (f64, usize),
    y0: (f64, usize),
    lambdas: &[f64],
    grid: &[f64],
    eps: &[f64],
) -> Result<TangentReport> {
    check_grid(grid)?;
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Validation("scales must decrease".into()));
    }
    let mut values = Vec::new();
    let mut measures = Vec::new();
    for &l in lambdas {
        let (fa, ma) = based_pair(build, x0.0, x0.1, l, grid)?;
        let (fb, mb) = based_pair(build, y0.0, y0.1, l, grid)?;
        let rep = line_distance(&fa, &ma, &fb, &mb)?;
        values.push(rep.value);
        measures.push(rep.exception_measure);
    }
    let below = eps.iter().map(|&e| (e, values.last().is_some_and(|&v| v < e))).collect();
    Ok(TangentReport { lambdas: lambdas.to_vec(), values, exception_measures: measures, below })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub sigma: f64,
    pub value: f64,
    pub exception_measure: f64,
    /// 2Aδ/β + δ³/H with δ = σ.
    pub exception_bound: f64,
}

/// F-distance bounds between the flow pair on `grid` (based at its top slice,
/// point `x`) and its time shifts by each σ. Both members of a pair are built
/// on the same grid, so no piecewise-constant lag enters the comparison.
pub fn time_shift_experiment(
    build: FlowBuilder,
    grid: &[f64],
    x: usize,
    sigmas: &[f64],
    beta: f64,
) -> Result<Vec<ShiftRow>> {
    let flow = build(grid)?;
    let top = flow.len() - 1;
    let mu = MeasureFlow::from_point(&flow, top, x)?;
    let mut rows = Vec::new();
    for &sigma in sigmas {
        if !(sigma > 0.0) {
            return Err(Error::Validation(format!("shift {sigma} must be positive")));
        }
        let common: Vec<f64> = grid.iter().cloned().filter(|&t| t >= grid[0] + sigma).collect();
        if common.len() < 2 {
            return Err(Error::Range(format!("shift {sigma} leaves no common window")));
        }
        let f1 = build(&common)?;
        let m1 = MeasureFlow::from_point(&f1, f1.len() - 1, x)?;
        let back: Vec<f64> = common.iter().map(|t| t - sigma).collect();
        let f2 = build(&back)?.time_shift(sigma);
        // μ^σ at the top is the original kernel carried down to −σ
        let carry = build(&[grid[top] - sigma, grid[top]])?.kernel_row(1, x, 0);
        let m2 = MeasureFlow::from_top(&f2, f2.len() - 1, carry)?;
        let rep = line_distance(&f1, &m1, &f2, &m2)?;
        let delta = sigma.min(0.49);
        let bad = bad_set(&flow, &mu, delta, beta)?;
        let bound = bad.measure_bound + if flow.h > 0.0 { delta.powi(3) / flow.h } else { 0.0 };
        rows.push(ShiftRow {
            sigma,
            value: rep.value,
            exception_measure: rep.exception_measure,
            exception_bound: bound,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub lambda: f64,
    pub value: f64,
    pub exception_measure: f64,
}

/// F-distance bounds between the flow pair on `grid` and its parabolic
/// rescalings by λ ≥ 1, slices aligned at their centres.
pub fn scaling_experiment(build: FlowBuilder, grid: &[f64], x: usize, lambdas: &[f64]) -> Result<Vec<ScaleRow>> {
    check_grid(grid)?;
    let f1 = build(grid)?;
    let m1 = MeasureFlow::from_point(&f1, f1.len() - 1, x)?;
    lambdas
        .iter()
        .map(|&l| {
            if !(l >= 1.0) {
                return Err(Error::Validation(format!("scale {l} must be at least 1")));
            }
            let inner: Vec<f64> = grid.iter().map(|t| t / (l * l)).collect();
            let f2 = build(&inner)?.rescale(l)?;
            let m2 = MeasureFlow::from_point(&f2, f2.len() - 1, x)?;
            let rep = line_distance(&f1, &m1, &f2, &m2)?;
            Ok(ScaleRow { lambda: l, value: rep.value, exception_measure: rep.exception_measure })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::{glue, heat_segment_flow, one_point_flow, shrinker_export};
    use super::*;

    fn heat() -> (FiniteMetricFlow, MeasureFlow) {
        let times: Vec<f64> = (0..=20).map(|k| -1.0 + 0.05 * k as f64).collect();
        let f = heat_segment_flow(6.0, 24, &times).unwrap();
        let mu = MeasureFlow::from_point(&f, 20, 12).unwrap();
        (f, mu)
    }

    #[test]
    fn identical_pairs_are_at_distance_zero() {
        let (f, mu) = heat();
        let rep = line_distance(&f, &mu, &f, &mu).unwrap();
        assert_eq!(rep.value, 0.0);
        assert!(rep.exception_times.is_empty());
        let p = one_point_flow(&[-1.0, 0.0], 1.0).unwrap();
        let m = MeasureFlow::from_point(&p, 1, 0).unwrap();
        assert_eq!(line_distance(&p, &m, &p, &m).unwrap().value, 0.0);
    }

    #[test]
    fn missing_slices_are_listed() {
        let (f, mu) = heat();
        let times = merged_times(&f, &mu, &f, &mu).unwrap();
        let mut corr = Correspondence::centred_lines(&f, &mu, &f, &mu, &times).unwrap();
        corr.slices.remove(3);
        corr.slices.remove(7);
        match f_distance_upper(&f, &mu, &f, &mu, &corr) {
            Err(Error::MissingSlices(v)) => assert_eq!(v, vec![3, 8]),
            other => panic!("expected missing slices, got {other:?}"),
        }
    }

    #[test]
    fn transposed_correspondence_gives_the_same_bound() {
        let (f, mu) = heat();
        let g = f.time_shift(0.1);
        let mg = mu.time_shift(0.1);
        let times = merged_times(&f, &mu, &g, &mg).unwrap();
        let corr = Correspondence::centred_lines(&f, &mu, &g, &mg, &times).unwrap();
        let ab = f_distance_upper(&f, &mu, &g, &mg, &corr).unwrap();
        let ba = f_distance_upper(&g, &mg, &f, &mu, &corr.transposed()).unwrap();
        assert!(ab.value > 0.0);
        assert_eq!(ab.value, ba.value);
    }

    #[test]
    fn glued_and_line_embeddings_agree_on_equal_slices() {
        let (f, mu) = heat();
        let times = merged_times(&f, &mu, &f, &mu).unwrap();
        let line = Correspondence::centred_lines(&f, &mu, &f, &mu, &times).unwrap();
        let mut glued = line.clone();
        for c in &mut glued.slices {
            let k = f.slice_at(c.time).unwrap();
            let g = glue(&f, k, k, &(0..24).collect::<Vec<_>>()).unwrap();
            c.z = ZSpace::Metric { n1: g.n1, n2: g.n2, dist: g.dist };
        }
        // shift the second copy off by one slice so the costs are nonzero
        let g = f.time_shift(0.05);
        let mg = mu.time_shift(0.05);
        let times = merged_times(&f, &mu, &g, &mg).unwrap();
        let a = Correspondence::centred_lines(&f, &mu, &g, &mg, &times).unwrap();
        let mut b = a.clone();
        for c in &mut b.slices {
            let k = f.slice_at(c.time).unwrap();
            let gl = glue(&f, k, k, &(0..24).collect::<Vec<_>>()).unwrap();
            c.z = ZSpace::Metric { n1: gl.n1, n2: gl.n2, dist: gl.dist };
        }
        let ra = f_distance_upper(&f, &mu, &g, &mg, &a).unwrap();
        let rb = f_distance_upper(&f, &mu, &g, &mg, &b).unwrap();
        assert!((ra.value - rb.value).abs() < 1e-9, "{} vs {}", ra.value, rb.value);
        assert_eq!(f_distance_upper(&f, &mu, &f, &mu, &glued).unwrap().value, 0.0);
    }

    #[test]
    fn shift_bound_shrinks_with_the_shift() {
        let grid: Vec<f64> = (0..=20).map(|k| -1.0 + 0.05 * k as f64).collect();
        let build = |t: &[f64]| heat_segment_flow(6.0, 24, t);
        let rows = time_shift_experiment(&build, &grid, 12, &[0.4, 0.1, 0.02], 0.25).unwrap();
        assert!(rows[0].value > rows[1].value && rows[1].value > rows[2].value, "{rows:?}");
        assert!(rows.iter().all(|r| r.exception_measure <= r.exception_bound));
    }

    #[test]
    fn unit_scale_is_free() {
        let grid: Vec<f64> = (0..=10).map(|k| -1.0 + 0.1 * k as f64).collect();
        let build = |t: &[f64]| heat_segment_flow(6.0, 24, t);
        let rows = scaling_experiment(&build, &grid, 12, &[1.0, 1.2]).unwrap();
        assert_eq!(rows[0].value, 0.0);
        assert!(rows[1].value > 0.0);
    }

    #[test]
    fn parabolic_ball_contains_its_centre() {
        let (f, _) = heat();
        let ball = parabolic_ball(&f, (20, 12), 0.3).unwrap();
        assert!(ball.contains(&(20, 12)));
        assert!(!ball.contains(&(20, 0)));
        assert!(ball.iter().all(|&(k, _)| f.times[k] >= -0.09 - 1e-12));
    }

    #[test]
    fn equal_base_points_give_zero() {
        let build = |t: &[f64]| shrinker_export(3, 12, t);
        let grid = [-1.0, -0.5, -0.25, 0.0];
        let rep = tangent_flow_experiment(&build, (-0.25, 3), (-0.25, 3), &[1.0, 0.5], &grid, &[0.05]).unwrap();
        assert!(rep.values.iter().all(|&v| v == 0.0));
        assert!(rep.below[0].1);
        // the based time must stay before the singular time
        assert!(tangent_flow_experiment(&build, (0.0, 3), (0.0, 3), &[1.0], &grid, &[]).is_err());
    }
}
