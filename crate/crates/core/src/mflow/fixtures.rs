//! Flows with closed-form kernels, and the radial quotient of PDE runs.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

use super::{FiniteMetricFlow, Kernel, MetricSlice};
use crate::flow::FlowTrajectory;
use crate::geom::WarpedMetric;
use crate::heat::{conjugate_step, h_n, SliceGeometry};
use crate::{Error, Result};

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("times must be nonempty and strictly increasing".into()));
    }
    Ok(())
}

/// Rounds away roundoff-level negative entries and renormalizes each row.
fn stochastic(mut p: DMatrix<f64>) -> Kernel {
    for i in 0..p.nrows() {
        let mut row = p.row_mut(i);
        row.iter_mut().for_each(|x| *x = x.max(0.0));
        let s = row.sum();
        row /= s;
    }
    Kernel::from_matrix(&p)
}

/// Single point with the given times.
pub fn one_point_flow(times: &[f64], h: f64) -> Result<FiniteMetricFlow> {
    check_times(times)?;
    let s = MetricSlice::on_line(vec![0.0], vec![1.0]);
    FiniteMetricFlow::new(times.to_vec(), vec![s; times.len()], vec![Kernel::identity(1); times.len() - 1], h, false)
}

/// Heat flow on [0, len] with reflecting ends: `m` cell-centred points with
/// unit jump diffusivity, kernels exp(Δt·L) of the Neumann lattice Laplacian
/// evaluated through its cosine eigenbasis. Concentration constant 4.
pub fn heat_segment_flow(len: f64, m: usize, times: &[f64]) -> Result<FiniteMetricFlow> {
    check_times(times)?;
    if !(len > 0.0) || m < 2 {
        return Err(Error::Validation("segment needs positive length and two points".into()));
    }
    let h = len / m as f64;
    let coords: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) * h).collect();
    let slice = MetricSlice::on_line(coords, vec![1.0 / m as f64; m]);
    let basis = DMatrix::from_fn(m, m, |i, k| {
        let norm = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
        norm * (PI * k as f64 * (i as f64 + 0.5) / m as f64).cos()
    });
    let rates: Vec<f64> = (0..m).map(|k| -(2.0 / h * (PI * k as f64 / (2.0 * m as f64)).sin()).powi(2)).collect();
    let kernels = times
        .windows(2)
        .map(|w| {
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                m,
                rates.iter().map(|r| (r * (w[1] - w[0])).exp()),
            ));
            stochastic(&basis * d * basis.transpose())
        })
        .collect();
    FiniteMetricFlow::new(times.to_vec(), vec![slice; times.len()], kernels, 4.0, false)
}

/// ∫ sin^{p} over [a, b] by composite Simpson.
fn sin_power_integral(p: i32, a: f64, b: f64) -> f64 {
    let n = 64;
    let h = (b - a) / n as f64;
    let f = |x: f64| x.sin().powi(p);
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Radial quotient of the round shrinking Sⁿ with a(t)² = 2(n−1)|t|, t < 0.
/// Points are `points` cell centres in the polar angle; kernels solve the
/// radial conjugate heat equation exactly in the rescaled time
/// ln(|s|/|t|)/(2(n−1)) through one symmetric eigendecomposition.
pub fn shrinker_export(n: usize, points: usize, times: &[f64]) -> Result<FiniteMetricFlow> {
    check_times(times)?;
    if n < 2 || points < 2 {
        return Err(Error::Validation("need n ≥ 2 and at least two points".into()));
    }
    if times.last().is_some_and(|&t| t >= 0.0) {
        return Err(Error::Range("the shrinker exists only for t < 0".into()));
    }
    let p = n as i32 - 1;
    let h = PI / points as f64;
    let theta: Vec<f64> = (0..points).map(|i| (i as f64 + 0.5) * h).collect();
    let mass: Vec<f64> = (0..points).map(|i| sin_power_integral(p, i as f64 * h, (i + 1) as f64 * h)).collect();
    let total: f64 = mass.iter().sum();
    let weights: Vec<f64> = mass.iter().map(|m| m / total).collect();
    // symmetric form M^{-1/2} C M^{-1/2} of the generator M^{-1} C
    let mut sym = DMatrix::zeros(points, points);
    for i in 0..points - 1 {
        let c = ((i + 1) as f64 * h).sin().powi(p) / h;
        let off = c / (mass[i] * mass[i + 1]).sqrt();
        sym[(i, i + 1)] = off;
        sym[(i + 1, i)] = off;
        sym[(i, i)] -= c / mass[i];
        sym[(i + 1, i + 1)] -= c / mass[i + 1];
    }
    let eig = SymmetricEigen::new(sym);
    let sq: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    let kernels = times
        .windows(2)
        .map(|w| {
            let span = (w[0] / w[1]).ln() / (2.0 * (n as f64 - 1.0));
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (l * span).exp()));
            let core = &eig.eigenvectors * d * eig.eigenvectors.transpose();
            stochastic(DMatrix::from_fn(points, points, |i, j| core[(i, j)] * sq[j] / sq[i]))
        })
        .collect();
    let slices = times
        .iter()
        .map(|&t| {
            let a = (2.0 * (n as f64 - 1.0) * t.abs()).sqrt();
            MetricSlice::on_line(theta.iter().map(|x| a * x).collect(), weights.clone())
        })
        .collect();
    FiniteMetricFlow::new(times.to_vec(), slices, kernels, h_n(n), true)
}

/// Radial quotient of a rotationally symmetric run at the given times: interior
/// grid nodes at their arclength, volume weights, and kernels obtained by
/// carrying each node's Dirac mass backward with the conjugate heat solver.
pub fn quotient_export(traj: &FlowTrajectory<WarpedMetric>, times: &[f64], cfl: f64) -> Result<FiniteMetricFlow> {
    check_times(times)?;
    let geo: Vec<SliceGeometry> =
        times.iter().map(|&t| traj.at(t).map(|g| SliceGeometry::from_warped(&g))).collect::<Result<_>>()?;
    let interior = |g: &SliceGeometry| (1..g.len() - 1).collect::<Vec<_>>();
    let slices = geo
        .iter()
        .map(|g| {
            let idx = interior(g);
            let total: f64 = idx.iter().map(|&i| g.mass[i]).sum();
            MetricSlice::on_line(
                idx.iter().map(|&i| g.coords[i]).collect(),
                idx.iter().map(|&i| g.mass[i] / total).collect(),
            )
        })
        .collect();
    let mut kernels = Vec::with_capacity(times.len() - 1);
    for k in 0..times.len() - 1 {
        let (lo, hi) = (times[k], times[k + 1]);
        let top = &geo[k + 1];
        let rows_idx = interior(top);
        let mut rows: Vec<Vec<f64>> = rows_idx
            .iter()
            .map(|&x| {
                let mut v = vec![0.0; top.len()];
                v[x] = 1.0 / top.mass[x];
                v
            })
            .collect();
        let mut t = hi;
        let mut now = top.clone();
        while t > lo {
            let mut dt = (cfl * now.stable_dt()).min(t - lo);
            let (t_next, prev) = loop {
                let t_next = if t - dt <= lo + 1e-14 * (1.0 + t.abs()) { lo } else { t - dt };
                let prev = SliceGeometry::from_warped(&traj.at(t_next)?);
                if t - t_next <= cfl * prev.stable_dt() * (1.0 + 1e-9) {
                    break (t_next, prev);
                }
                dt *= 0.5;
            };
            for v in rows.iter_mut() {
                *v = conjugate_step(v, &now, &prev, t - t_next).map_err(|e| e.at_stage("quotient export", t))?.0;
            }
            now = prev;
            t = t_next;
        }
        let cols = interior(&now);
        let data: Vec<f64> = rows
            .iter()
            .flat_map(|v| {
                let p: Vec<f64> = cols.iter().map(|&j| (v[j] * now.mass[j]).max(0.0)).collect();
                let s: f64 = p.iter().sum();
                p.into_iter().map(move |x| x / s)
            })
            .collect();
        kernels.push(Kernel { rows: rows_idx.len(), cols: cols.len(), data });
    }
    FiniteMetricFlow::new(times.to_vec(), slices, kernels, h_n(traj.states[0].dim()), true)
}
