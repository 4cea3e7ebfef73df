//! Finite metric flows: time-indexed finite metric-measure spaces with backward
//! probability kernels, and the estimators built on them.

mod fdist;
mod fixtures;
pub mod w1;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use fdist::{
    f_distance_upper, line_distance, merged_times, parabolic_ball, scaling_experiment, tangent_flow_experiment,
    time_shift_experiment, Correspondence, CorrespondenceSlice, FDistanceReport, FlowBuilder, ScaleRow, ShiftRow,
    TangentReport, ZSpace,
};
pub use fixtures::{heat_segment_flow, one_point_flow, quotient_export, shrinker_export};
pub use w1::{line_coupling, transport, w1, w1_enumerate, w1_line, Transport, W1_MAX_POINTS};

pub const FLOW_FORMAT: u32 = 1;

const METRIC_TOL: f64 = 1e-9;
const STOCHASTIC_TOL: f64 = 1e-9;
/// Tolerance of the kernel-reproduction identity for conjugate heat flows.
pub const REPRODUCTION_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSlice {
    /// Row-major distance matrix.
    pub dist: Vec<f64>,
    /// Reference probability weights.
    pub weights: Vec<f64>,
    /// Positions on a line realizing `dist`, when the slice embeds in one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<f64>>,
}

impl MetricSlice {
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.len() + j]
    }

    /// Slice of points on a line.
    pub fn on_line(coords: Vec<f64>, weights: Vec<f64>) -> Self {
        let dist = coords.iter().flat_map(|a| coords.iter().map(move |b| (a - b).abs())).collect();
        Self { dist, weights, coords: Some(coords) }
    }

    fn scaled(&self, lambda: f64) -> Self {
        Self {
            dist: self.dist.iter().map(|d| lambda * d).collect(),
            weights: self.weights.clone(),
            coords: self.coords.as_ref().map(|c| c.iter().map(|x| lambda * x).collect()),
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        let m = self.len();
        let bad = |msg: String| Err(Error::Validation(format!("slice {k}: {msg}")));
        if m == 0 || self.dist.len() != m * m {
            return bad(format!("{} distances for {} points", self.dist.len(), m));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|&w| !(w >= 0.0)) || (total - 1.0).abs() > STOCHASTIC_TOL {
            return bad(format!("weights are not a probability vector (total {total})"));
        }
        let scale = self.dist.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
        for i in 0..m {
            if self.d(i, i) != 0.0 {
                return bad(format!("nonzero diagonal at {i}"));
            }
            for j in 0..m {
                let dij = self.d(i, j);
                if !dij.is_finite() || dij < 0.0 || (dij - self.d(j, i)).abs() > METRIC_TOL * scale {
                    return bad(format!("distance ({i},{j}) is negative or asymmetric"));
                }
            }
        }
        if let Some(c) = &self.coords {
            if c.len() != m || c.windows(2).any(|w| w[1] < w[0]) {
                return bad("line coordinates must be sorted, one per point".into());
            }
            for i in 0..m {
                for j in 0..m {
                    if (self.d(i, j) - (c[i] - c[j]).abs()).abs() > METRIC_TOL * scale {
                        return bad(format!("line coordinates disagree with distance ({i},{j})"));
                    }
                }
            }
        } else {
            for i in 0..m {
                for j in 0..m {
                    for l in 0..m {
                        if self.d(i, l) > self.d(i, j) + self.d(j, l) + METRIC_TOL * scale {
                            return bad(format!("triangle inequality fails on ({i},{j},{l})"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Row-stochastic matrix, row-major, rows indexing the later slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
    pub fn identity(m: usize) -> Self {
        Self::from_matrix(&DMatrix::identity(m, m))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteMetricFlow {
    pub format: u32,
    pub times: Vec<f64>,
    pub slices: Vec<MetricSlice>,
    /// `kernels[k]` carries slice k+1 back to slice k; longer kernels are products.
    pub kernels: Vec<Kernel>,
    /// Concentration constant the flow is expected to satisfy.
    pub h: f64,
    /// Radial quotient of a manifold flow, checked with slack.
    pub quotient: bool,
}

impl FiniteMetricFlow {
    pub fn new(
        times: Vec<f64>,
        slices: Vec<MetricSlice>,
        kernels: Vec<Kernel>,
        h: f64,
        quotient: bool,
    ) -> Result<Self> {
        let f = Self { format: FLOW_FORMAT, times, slices, kernels, h, quotient };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FLOW_FORMAT {
            return Err(Error::Version { found: self.format as u64, expected: FLOW_FORMAT as u64 });
        }
        if self.times.is_empty() || self.times.len() != self.slices.len() {
            return Err(Error::Validation(format!("{} times for {} slices", self.times.len(), self.slices.len())));
        }
        if self.times.iter().any(|t| !t.is_finite()) || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Validation("times must be finite and strictly increasing".into()));
        }
        if self.kernels.len() + 1 != self.times.len() {
            return Err(Error::Validation(format!("{} kernels for {} times", self.kernels.len(), self.times.len())));
        }
        if !(self.h >= 0.0) {
            return Err(Error::Validation(format!("concentration constant {} must be nonnegative", self.h)));
        }
        for (k, s) in self.slices.iter().enumerate() {
            s.validate(k)?;
        }
        for (k, ker) in self.kernels.iter().enumerate() {
            if ker.rows != self.slices[k + 1].len()
                || ker.cols != self.slices[k].len()
                || ker.data.len() != ker.rows * ker.cols
            {
                return Err(Error::Validation(format!("kernel {k} has the wrong shape")));
            }
            for r in 0..ker.rows {
                let row = &ker.data[r * ker.cols..(r + 1) * ker.cols];
                let total: f64 = row.iter().sum();
                if row.iter().any(|&x| !(x >= 0.0)) || (total - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::Validation(format!("kernel {k} row {r} is not a probability vector")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn first_time(&self) -> f64 {
        self.times[0]
    }
    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Slice in force at time `t`: the last grid time at or before it.
    pub fn slice_at(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * (1.0 + t.abs());
        if t < self.first_time() - tol || t > self.last_time() + tol {
            return Err(Error::Range(format!("time {t} outside [{}, {}]", self.first_time(), self.last_time())));
        }
        Ok(self.times.partition_point(|&s| s <= t + tol).saturating_sub(1))
    }

    /// Index of a grid time, if present.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.slice_at(t).ok()?;
        ((self.times[k] - t).abs() <= 1e-12 * (1.0 + t.abs())).then_some(k)
    }

    /// Kernel from slice `top` down to slice `bottom` (rows index slice `top`).
    pub fn kernel(&self, top: usize, bottom: usize) -> DMatrix<f64> {
        assert!(bottom <= top && top < self.len());
        let mut p = DMatrix::identity(self.slices[top].len(), self.slices[top].len());
        for k in (bottom..top).rev() {
            p *= self.kernels[k].matrix();
        }
        p
    }

    /// Time shift by `a`: the new flow at time t is the old one at t − a.
    pub fn time_shift(&self, a: f64) -> Self {
        Self { times: self.times.iter().map(|t| t + a).collect(), ..self.clone() }
    }

    /// Parabolic rescaling: distances ×λ, times ×λ².
    pub fn rescale(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Validation(format!("scale factor {lambda} must be positive")));
        }
        Ok(Self {
            times: self.times.iter().map(|t| lambda * lambda * t).collect(),
            slices: self.slices.iter().map(|s| s.scaled(lambda)).collect(),
            ..self.clone()
        })
    }

    /// Slices with times in [a, b].
    pub fn window(&self, a: f64, b: f64) -> Result<Self> {
        let idx: Vec<usize> =
            (0..self.len()).filter(|&k| self.times[k] >= a - 1e-12 && self.times[k] <= b + 1e-12).collect();
        if idx.is_empty() {
            return Err(Error::Range(format!("no slices in [{a}, {b}]")));
        }
        self.subsample(&idx)
    }

    /// Restriction to the given increasing slice indices; kernels are composed.
    pub fn subsample(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() || idx.windows(2).any(|w| w[1] <= w[0]) || *idx.last().unwrap() >= self.len() {
            return Err(Error::Validation("slice indices must increase within the flow".into()));
        }
        let kernels = idx.windows(2).map(|w| Kernel::from_matrix(&self.kernel(w[1], w[0]))).collect();
        Ok(Self {
            format: self.format,
            times: idx.iter().map(|&k| self.times[k]).collect(),
            slices: idx.iter().map(|&k| self.slices[k].clone()).collect(),
            kernels,
            h: self.h,
            quotient: self.quotient,
        })
    }

    /// Kernel row ν_{x|s} for point `x` of slice `top`, at slice `bottom`.
    pub fn kernel_row(&self, top: usize, x: usize, bottom: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.slices[top].len()];
        row[x] = 1.0;
        for k in (bottom..top).rev() {
            let ker = &self.kernels[k];
            let mut next = vec![0.0; ker.cols];
            for (i, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    for (j, n) in next.iter_mut().enumerate() {
                        *n += w * ker.data[i * ker.cols + j];
                    }
                }
            }
            row = next;
        }
        row
    }
}

/// ∬ d² dμ₁ dμ₂ on a slice.
pub fn variance(slice: &MetricSlice, mu1: &[f64], mu2: &[f64]) -> f64 {
    let m = slice.len();
    let mut v = 0.0;
    for (a, row) in mu1.iter().zip(slice.dist.chunks(m)) {
        if *a == 0.0 {
            continue;
        }
        v += a * mu2.iter().zip(row).map(|(b, d)| b * d * d).sum::<f64>();
    }
    v
}

/// Discrete conjugate heat flow: one probability vector per slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureFlow {
    pub times: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
}

impl MeasureFlow {
    /// Pushes `mu_top` on slice `top` down through the kernels; slices above
    /// `top` are dropped.
    pub fn from_top(flow: &FiniteMetricFlow, top: usize, mu_top: Vec<f64>) -> Result<Self> {
        if top >= flow.len() || mu_top.len() != flow.slices[top].len() {
            return Err(Error::Shape("top measure does not match its slice".into()));
        }
        let total: f64 = mu_top.iter().sum();
        if (total - 1.0).abs() > STOCHASTIC_TOL || mu_top.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Unnormalized(format!("top measure has mass {total}")));
        }
        let mut mu = vec![mu_top];
        for k in (0..top).rev() {
            let ker = &flow.kernels[k];
            let prev = mu.last().unwrap();
            let mut next = vec![0.0; ker.cols];
            for (i, &w) in prev.iter().enumerate() {
                if w != 0.0 {
                    for (j, n) in next.iter_mut().enumerate() {
                        *n += w * ker.data[i * ker.cols + j];
                    }
                }
            }
            mu.push(next);
        }
        mu.reverse();
        Ok(Self { times: flow.times[..=top].to_vec(), mu })
    }

    /// Conjugate heat kernel ν_{x|·} based at point `x` of slice `top`.
    pub fn from_point(flow: &FiniteMetricFlow, top: usize, x: usize) -> Result<Self> {
        let mut d = vec![0.0; flow.slices.get(top).map_or(0, |s| s.len())];
        if x >= d.len() {
            return Err(Error::Range(format!("point {x} outside slice {top}")));
        }
        d[x] = 1.0;
        Self::from_top(flow, top, d)
    }

    pub fn time_shift(&self, a: f64) -> Self {
        Self { times: self.times.iter().map(|t| t + a).collect(), mu: self.mu.clone() }
    }
    pub fn rescale(&self, lambda: f64) -> Self {
        Self { times: self.times.iter().map(|t| lambda * lambda * t).collect(), mu: self.mu.clone() }
    }

    /// Measure in force at time `t` (last stored time at or before it).
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        let tol = 1e-12 * (1.0 + t.abs());
        if t < self.times[0] - tol || t > self.times.last()? + tol {
            return None;
        }
        let k = self.times.partition_point(|&s| s <= t + tol).saturating_sub(1);
        Some(&self.mu[k])
    }

    /// Largest violation of μ_s = Σ μ_t ν_{·|s} over consecutive slices.
    pub fn reproduction_error(&self, flow: &FiniteMetricFlow) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for w in 0..self.times.len().saturating_sub(1) {
            let (ks, kt) = (
                flow.index_of(self.times[w]).ok_or_else(|| Error::Range("measure time not on the flow grid".into()))?,
                flow.index_of(self.times[w + 1])
                    .ok_or_else(|| Error::Range("measure time not on the flow grid".into()))?,
            );
            let p = flow.kernel(kt, ks);
            for j in 0..p.ncols() {
                let pushed: f64 = (0..p.nrows()).map(|i| self.mu[w + 1][i] * p[(i, j)]).sum();
                worst = worst.max((pushed - self.mu[w][j]).abs());
            }
        }
        Ok(worst)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HConcentrationReport {
    /// min over sampled (x, y, s, t) of slack·(d_t² + H(t − s)) − Var(ν_{x|s}, ν_{y|s}).
    pub worst_margin: f64,
    /// (t, s, x, y) attaining the worst margin.
    pub worst_at: (f64, f64, usize, usize),
    pub pairs: usize,
    pub slack: f64,
    pub pass: bool,
}

/// Checks Var(ν_{x|s}, ν_{y|s}) ≤ d_t(x,y)² + H(t − s) over every slice pair
/// (every `stride`-th top slice); quotient flows get a 1.1 slack factor.
pub fn check_h_concentration(flow: &FiniteMetricFlow, stride: usize) -> HConcentrationReport {
    let slack = if flow.quotient { 1.1 } else { 1.0 };
    let mut worst = (f64::INFINITY, (0.0, 0.0, 0, 0));
    let mut pairs = 0;
    for kt in (1..flow.len()).rev().step_by(stride.max(1)) {
        let st = &flow.slices[kt];
        let mut p: DMatrix<f64> = DMatrix::identity(st.len(), st.len());
        for ks in (0..kt).rev() {
            p *= flow.kernels[ks].matrix();
            let ss = &flow.slices[ks];
            let d2: DMatrix<f64> = DMatrix::from_fn(ss.len(), ss.len(), |i, j| ss.d(i, j).powi(2));
            let var: DMatrix<f64> = &p * d2 * p.transpose();
            let gap = flow.h * (flow.times[kt] - flow.times[ks]);
            for x in 0..st.len() {
                for y in 0..st.len() {
                    let margin = slack * (st.d(x, y).powi(2) + gap) - var[(x, y)];
                    if margin < worst.0 {
                        worst = (margin, (flow.times[kt], flow.times[ks], x, y));
                    }
                }
            }
            pairs += st.len() * st.len();
        }
    }
    HConcentrationReport { worst_margin: worst.0, worst_at: worst.1, pairs, slack, pass: worst.0 >= -1e-9 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub times: Vec<f64>,
    /// v(t) = Var(μ_t) + H t.
    pub v: Vec<f64>,
    /// min over consecutive slices of slack·(Var_t + H(t − s)) − Var_s.
    pub worst_margin: f64,
    pub nondecreasing: bool,
}

/// Variance monotonicity of a conjugate heat flow: Var(μ_s) ≤ Var(μ_t) + H(t − s).
pub fn variance_monotonicity(flow: &FiniteMetricFlow, mu: &MeasureFlow) -> Result<VarianceReport> {
    let slack = if flow.quotient { 1.1 } else { 1.0 };
    let mut var = Vec::with_capacity(mu.times.len());
    for (t, m) in mu.times.iter().zip(&mu.mu) {
        let k = flow.index_of(*t).ok_or_else(|| Error::Range(format!("time {t} not on the flow grid")))?;
        var.push(variance(&flow.slices[k], m, m));
    }
    let mut worst = f64::INFINITY;
    for w in 1..var.len() {
        let gap = flow.h * (mu.times[w] - mu.times[w - 1]);
        worst = worst.min(slack * (var[w] + gap) - var[w - 1]);
    }
    let v = var.iter().zip(&mu.times).map(|(a, t)| a + flow.h * t).collect();
    Ok(VarianceReport { times: mu.times.clone(), v, worst_margin: worst, nondecreasing: worst >= -1e-9 })
}

/// Largest mass carried by a single ball of radius eps·r.
pub fn mass_distribution(slice: &MetricSlice, mu: &[f64], r: f64, eps: f64) -> f64 {
    let m = slice.len();
    (0..m).map(|x| (0..m).filter(|&y| slice.d(x, y) < eps * r).map(|y| mu[y]).sum::<f64>()).fold(0.0, f64::max)
}

/// CDF of the centred normal law with variance 2.
pub fn phi_normal2(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / 2.0))
}

/// Piecewise lower bound b(ε) on the mass distribution function, ε ∈ (0, 1].
pub fn b_lower(eps: f64, v: f64, h: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Range(format!("eps {eps} outside (0, 1]")));
    }
    if !(h > 0.0) || v < 0.0 {
        return Err(Error::Validation("need H > 0 and V ≥ 0".into()));
    }
    // ε ∈ (2^{−j}, 2^{1−j}] uses τ_j = 2^{−3(j+1)}/H
    let j = (-eps.log2()).floor().max(0.0) as i32;
    let j = if eps <= 2f64.powi(-j) { j + 1 } else { j };
    let tau = 2f64.powi(-3 * (j + 1)) / h;
    Ok(0.5 * phi_normal2(-(8.0 * v / (eps * tau)).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadSet {
    pub delta: f64,
    pub beta: f64,
    /// Grid times with v(t) − v(t − δ) ≥ β.
    pub times: Vec<f64>,
    pub measure: f64,
    /// 2Aδ/β with A = V + H·(length of the time interval).
    pub measure_bound: f64,
    pub a: f64,
    pub within_bound: bool,
}

/// Cell measure of each grid time. A piecewise-constant flow holds slice k on
/// [t_k, t_{k+1}), so the final time carries no measure.
pub fn time_cells(times: &[f64]) -> Vec<f64> {
    (0..times.len()).map(|k| if k + 1 < times.len() { times[k + 1] - times[k] } else { 0.0 }).collect()
}

/// Times where the drift-corrected variance jumps by at least β over a δ-window.
pub fn bad_set(flow: &FiniteMetricFlow, mu: &MeasureFlow, delta: f64, beta: f64) -> Result<BadSet> {
    if !(delta > 0.0 && delta < 0.5 && beta > 0.0 && beta < 0.5) {
        return Err(Error::Validation(format!("δ = {delta} and β = {beta} must lie in (0, 1/2)")));
    }
    let rep = variance_monotonicity(flow, mu)?;
    let var: Vec<f64> = rep.v.iter().zip(&rep.times).map(|(v, t)| v - flow.h * t).collect();
    let vmax = var.iter().cloned().fold(0.0, f64::max);
    let span = rep.times.last().unwrap() - rep.times[0];
    // v(top) − v(bottom) ≤ V + H·span bounds the number of disjoint jumps
    let a = vmax + flow.h * span;
    let interp = |t: f64| -> Option<f64> {
        let ts = &rep.times;
        if t < ts[0] - 1e-12 {
            return None;
        }
        let k = ts.partition_point(|&s| s <= t).clamp(1, ts.len() - 1);
        let w = ((t - ts[k - 1]) / (ts[k] - ts[k - 1])).clamp(0.0, 1.0);
        Some(rep.v[k - 1] + w * (rep.v[k] - rep.v[k - 1]))
    };
    let cells = time_cells(&rep.times);
    let mut times = Vec::new();
    let mut measure = 0.0;
    for (k, &t) in rep.times.iter().enumerate() {
        if let Some(prev) = interp(t - delta) {
            if rep.v[k] - prev >= beta {
                times.push(t);
                measure += cells[k];
            }
        }
    }
    let bound = 2.0 * a * delta / beta;
    Ok(BadSet { delta, beta, times, measure, measure_bound: bound, a, within_bound: measure <= bound + 1e-12 })
}

/// Coupling q(x, y) = μ_t(y)·ν_{y|t'}(x) between μ_{t'} (rows) and μ_t (columns).
pub fn build_coupling(flow: &FiniteMetricFlow, mu_t: &[f64], t: usize, t_prime: usize) -> Result<DMatrix<f64>> {
    if t_prime > t || t >= flow.len() {
        return Err(Error::Range(format!("need t' = {t_prime} ≤ t = {t} inside the flow")));
    }
    let p = flow.kernel(t, t_prime);
    Ok(DMatrix::from_fn(p.ncols(), p.nrows(), |x, y| mu_t[y] * p[(y, x)]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GluedSpace {
    /// Points 0..n1 are the earlier slice, n1..n1+n2 the chosen subset of the later one.
    pub n1: usize,
    pub n2: usize,
    pub subset: Vec<usize>,
    pub dist: Vec<f64>,
    /// Largest amount by which a candidate distance was lowered.
    pub repair_magnitude: f64,
}

impl GluedSpace {
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * (self.n1 + self.n2) + j]
    }
}

/// Glues slice t' and a subset of slice t with cross distances W1(δ_x, ν_{y|t'}),
/// then takes the shortest-path metric.
pub fn glue(flow: &FiniteMetricFlow, t: usize, t_prime: usize, subset: &[usize]) -> Result<GluedSpace> {
    if t_prime > t || t >= flow.len() {
        return Err(Error::Range(format!("need t' = {t_prime} ≤ t = {t} inside the flow")));
    }
    let (a, b) = (&flow.slices[t_prime], &flow.slices[t]);
    if subset.iter().any(|&y| y >= b.len()) {
        return Err(Error::Range("subset point outside the later slice".into()));
    }
    let p = flow.kernel(t, t_prime);
    let (n1, n2) = (a.len(), subset.len());
    let n = n1 + n2;
    let mut d = vec![0.0; n * n];
    for i in 0..n1 {
        for j in 0..n1 {
            d[i * n + j] = a.d(i, j);
        }
    }
    for (u, &y1) in subset.iter().enumerate() {
        for (v, &y2) in subset.iter().enumerate() {
            d[(n1 + u) * n + n1 + v] = b.d(y1, y2);
        }
        for x in 0..n1 {
            let c: f64 = (0..n1).map(|z| p[(y1, z)] * a.d(x, z)).sum();
            d[x * n + n1 + u] = c;
            d[(n1 + u) * n + x] = c;
        }
    }
    let cand = d.clone();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i * n + k] + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                }
            }
        }
    }
    let repair = cand.iter().zip(&d).map(|(c, x)| c - x).fold(0.0, f64::max);
    Ok(GluedSpace { n1, n2, subset: subset.to_vec(), dist: d, repair_magnitude: repair })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn phi_normalization() {
        assert_eq!(phi_normal2(0.0), 0.5);
        assert!(phi_normal2(-40.0) < 1e-300 + 1e-16);
        assert!((phi_normal2(40.0) - 1.0).abs() < 1e-15);
        // derivative matches (4π)^{-1/2} e^{−x²/4}
        let x = 0.7;
        let d = (phi_normal2(x + 1e-5) - phi_normal2(x - 1e-5)) / 2e-5;
        assert_relative_eq!(d, (-x * x / 4.0).exp() / (4.0 * std::f64::consts::PI).sqrt(), max_relative = 1e-8);
    }

    #[test]
    fn b_lower_increases_across_breakpoints() {
        let grid: Vec<f64> = (1..=400).map(|k| k as f64 / 400.0).collect();
        let vals: Vec<f64> = grid.iter().map(|&e| b_lower(e, 0.01, 4.0).unwrap()).collect();
        // deep bands underflow to zero in double precision
        assert!(vals.iter().all(|&v| (0.0..0.5).contains(&v)));
        assert!(vals[200..].iter().all(|&v| v > 0.0));
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        assert!(b_lower(0.5, 0.01, 4.0).unwrap() < b_lower(0.51, 0.01, 4.0).unwrap());
        assert!(b_lower(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn single_atom_mass() {
        let s = MetricSlice::on_line(vec![0.0], vec![1.0]);
        assert_eq!(mass_distribution(&s, &[1.0], 1.0, 0.1), 1.0);
    }

    #[test]
    fn static_flow_has_no_bad_times() {
        let s = MetricSlice::on_line(vec![0.0, 1.0, 2.0], vec![1.0 / 3.0; 3]);
        let times: Vec<f64> = (0..21).map(|k| -2.0 + 0.1 * k as f64).collect();
        let flow =
            FiniteMetricFlow::new(times.clone(), vec![s; 21], vec![Kernel::identity(3); 20], 1.0, false).unwrap();
        let mu = MeasureFlow::from_top(&flow, 20, vec![0.2, 0.5, 0.3]).unwrap();
        let e = bad_set(&flow, &mu, 0.2, 0.21).unwrap();
        assert!(e.times.is_empty());
        assert!(e.within_bound);
        let e = bad_set(&flow, &mu, 0.2, 0.19).unwrap();
        assert!(!e.times.is_empty());
    }

    #[test]
    fn variance_jump_is_found() {
        // the measure is a single atom up to t* = −0.5 and spreads right after it
        let s = MetricSlice::on_line(vec![0.0, 1.0], vec![0.5, 0.5]);
        let times: Vec<f64> = (0..11).map(|k| -1.0 + 0.1 * k as f64).collect();
        let mut kernels = vec![Kernel::identity(2); 10];
        kernels[5] = Kernel { rows: 2, cols: 2, data: vec![1.0, 0.0, 1.0, 0.0] };
        let flow = FiniteMetricFlow::new(times, vec![s; 11], kernels, 0.0, false).unwrap();
        let mu = MeasureFlow::from_top(&flow, 10, vec![0.5, 0.5]).unwrap();
        let e = bad_set(&flow, &mu, 0.2, 0.4).unwrap();
        assert_eq!(e.times.len(), 2);
        assert_relative_eq!(e.times[0], -0.4, epsilon = 1e-12);
        assert_relative_eq!(e.times[1], -0.3, epsilon = 1e-12);
        assert!(e.within_bound);
        assert!(!variance_monotonicity(&flow, &mu).unwrap().nondecreasing || flow.h == 0.0);
    }

    #[test]
    fn coupling_marginals() {
        let flow = heat_segment_flow(4.0, 16, &[-1.0, -0.5, 0.0]).unwrap();
        let mu = MeasureFlow::from_point(&flow, 2, 5).unwrap();
        let q = build_coupling(&flow, &mu.mu[2], 2, 0).unwrap();
        for x in 0..16 {
            assert!((q.row(x).sum() - mu.mu[0][x]).abs() < 1e-12);
            assert!((q.column(x).sum() - mu.mu[2][x]).abs() < 1e-12);
        }
    }

    #[test]
    fn glue_is_a_metric() {
        let flow = heat_segment_flow(4.0, 12, &[-0.2, -0.1, 0.0]).unwrap();
        let g = glue(&flow, 2, 2, &(0..12).collect::<Vec<_>>()).unwrap();
        assert!(g.repair_magnitude < 1e-12);
        for i in 0..12 {
            assert!(g.d(i, 12 + i) < 1e-12);
        }
        let g = glue(&flow, 2, 1, &(0..12).collect::<Vec<_>>()).unwrap();
        let n = 24;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    assert!(g.d(i, k) <= g.d(i, j) + g.d(j, k) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn shift_and_scale() {
        let flow = heat_segment_flow(4.0, 8, &[-1.0, -0.5, 0.0]).unwrap();
        assert_eq!(flow.rescale(1.0).unwrap(), flow);
        let back = flow.rescale(1.7).unwrap().rescale(1.0 / 1.7).unwrap();
        for (a, b) in back.times.iter().zip(&flow.times) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in back.slices[1].dist.iter().zip(&flow.slices[1].dist) {
            assert!((a - b).abs() < 1e-12);
        }
        let shifted = flow.time_shift(0.25);
        assert_eq!(shifted.slice_at(0.0).unwrap(), 1);
        assert!(flow.slice_at(0.1).is_err());
        assert!(flow.rescale(0.0).is_err());
    }

    #[test]
    fn validation_rejects_bad_flows() {
        let s = MetricSlice { dist: vec![0.0, 1.0, 2.0, 0.0], weights: vec![0.5, 0.5], coords: None };
        assert!(FiniteMetricFlow::new(vec![0.0], vec![s], vec![], 1.0, false).is_err());
        let s = MetricSlice::on_line(vec![0.0, 1.0], vec![0.5, 0.5]);
        let k = Kernel { rows: 2, cols: 2, data: vec![0.7, 0.7, 0.5, 0.5] };
        assert!(FiniteMetricFlow::new(vec![0.0, 1.0], vec![s.clone(), s], vec![k], 1.0, false).is_err());
    }
}
