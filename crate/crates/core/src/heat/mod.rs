//! Conjugate heat kernels along a flow, variance and concentration centres.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::flow::FlowTrajectory;
use crate::geom::{HomogeneousMetric, WarpedMetric};
use crate::{unit_sphere_volume, Error, Result};

/// Concentration constant (n−1)π²/2 + 4.
pub fn h_n(n: usize) -> f64 {
    (n as f64 - 1.0) * PI * PI / 2.0 + 4.0
}

/// Cell masses, edge conductances and node positions of one time slice.
/// Edge `i` joins nodes `i` and `i+1`; a zero conductance means no flux.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceGeometry {
    pub mass: Vec<f64>,
    pub edge: Vec<f64>,
    pub coords: Vec<f64>,
    /// Forward-time velocity of material points across each edge, in grid units.
    pub drift: Vec<f64>,
    /// Grid spacing the drift is measured in.
    pub spacing: f64,
}

impl SliceGeometry {
    /// Radial quotient of a warped metric; the pole cells have zero mass and no flux.
    pub fn from_warped(g: &WarpedMetric) -> Self {
        let mass = g.volume_weights();
        let h = g.h();
        let om = unit_sphere_volume(g.dim() - 1);
        let (u, phi) = (g.u(), g.phi());
        let m = u.len();
        let mut edge = vec![0.0; m - 1];
        for i in 1..m - 2 {
            let p = 0.5 * (phi[i] + phi[i + 1]);
            edge[i] = om * p.powi(g.dim() as i32 - 1) / (0.5 * (u[i] + u[i + 1]) * h);
        }
        let mut drift = vec![0.0; m - 1];
        // constant-speed slices move relative to the material; others are material
        if g.is_uniform() {
            if let Ok(w) = crate::flow::ricci::material_velocity(g) {
                for i in 1..m - 2 {
                    drift[i] = 0.5 * (w[i] + w[i + 1]);
                }
            }
        }
        Self { mass, edge, coords: g.arclength(), drift, spacing: h }
    }

    /// Segment [0, len] with reflecting ends, cell-centred nodes.
    pub fn flat_segment(len: f64, cells: usize) -> Self {
        let h = len / cells as f64;
        Self {
            mass: vec![h; cells],
            edge: vec![1.0 / h; cells - 1],
            coords: (0..cells).map(|i| (i as f64 + 0.5) * h).collect(),
            drift: vec![0.0; cells - 1],
            spacing: h,
        }
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }
    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// Largest explicit step that keeps the update positive.
    pub fn stable_dt(&self) -> f64 {
        (0..self.len())
            .filter(|&i| self.mass[i] > 0.0)
            .map(|i| {
                let left =
                    if i > 0 { self.edge[i - 1] + self.drift[i - 1].abs() * self.mass[i] / self.spacing } else { 0.0 };
                let right = if i < self.edge.len() {
                    self.edge[i] + self.drift[i].abs() * self.mass[i] / self.spacing
                } else {
                    0.0
                };
                self.mass[i] / (left + right).max(f64::MIN_POSITIVE)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn flux(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (i, c) in self.edge.iter().enumerate() {
            // q flows from node i+1 to node i; backward in time mass moves against the drift
            let carried = self.drift[i] * 0.5 * (v[i] * self.mass[i] + v[i + 1] * self.mass[i + 1]) / self.spacing;
            let q = c * (v[i + 1] - v[i]) + carried;
            out[i] += q;
            out[i + 1] -= q;
        }
        out
    }

    fn density(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.mass).map(|(p, m)| if *m > 0.0 { p / m } else { 0.0 }).collect()
    }

    /// Fills zero-mass pole nodes from their neighbours for display and quadrature.
    fn fill_poles(&self, v: &mut [f64]) {
        let last = v.len() - 1;
        if self.mass[0] == 0.0 && last > 0 {
            v[0] = v[1];
        }
        if self.mass[last] == 0.0 && last > 0 {
            v[last] = v[last - 1];
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// |1 − mass| before renormalization.
    pub drift: f64,
    /// Nodes clipped from below −1e−10 relative to the peak.
    pub clipped: usize,
}

/// One Heun step of the conjugate heat equation backward from `now` to `prev`.
/// The cell masses p = v·m move only by diffusive and drift flux, so the change
/// of volume form carries the −Rv term exactly.
pub fn conjugate_step(v: &[f64], now: &SliceGeometry, prev: &SliceGeometry, dt: f64) -> Result<(Vec<f64>, StepLog)> {
    if v.len() != now.len() || now.len() != prev.len() {
        return Err(Error::Shape("density and slices differ in length".into()));
    }
    let bound = now.stable_dt().min(prev.stable_dt());
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, bound });
    }
    let p: Vec<f64> = v.iter().zip(&now.mass).map(|(a, b)| a * b).collect();
    let k1 = now.flux(v);
    let pred: Vec<f64> = p.iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
    let k2 = prev.flux(&prev.density(&pred));
    let mut next: Vec<f64> = p.iter().zip(k1.iter().zip(&k2)).map(|(a, (b, c))| a + 0.5 * dt * (b + c)).collect();
    let peak = next.iter().cloned().fold(0.0, f64::max);
    let mut log = StepLog::default();
    for x in next.iter_mut() {
        if *x < 0.0 {
            if *x < -1e-10 * peak {
                log.clipped += 1;
            }
            *x = 0.0;
        }
    }
    let total: f64 = next.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NonFinite("conjugate heat mass"));
    }
    log.drift = (total - 1.0).abs();
    let mut out = prev.density(&next.iter().map(|x| x / total).collect::<Vec<_>>());
    prev.fill_poles(&mut out);
    Ok((out, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelBase {
    Pole { node: usize, t0: f64 },
    Uniform { t0: f64 },
    Singular { t0: f64 },
}

/// Densities of a conjugate heat flow on decreasing times below the base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjugateHeatFlow {
    pub times: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    /// Radial position of each node (quotient arclength).
    pub coords: Vec<Vec<f64>>,
    pub base: KernelBase,
    /// τ is measured from this time; exceeds the base time by the smoothing age.
    pub virtual_base: f64,
    pub n: usize,
    pub max_drift: f64,
    pub clipped: usize,
    pub smoothing_steps: usize,
}

impl ConjugateHeatFlow {
    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn tau(&self, slice: usize) -> f64 {
        self.virtual_base - self.times[slice]
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    /// Probability vector (density times weight) at a slice.
    pub fn measure(&self, slice: usize) -> Vec<f64> {
        self.densities[slice].iter().zip(&self.weights[slice]).map(|(a, b)| a * b).collect()
    }
    pub fn mass(&self, slice: usize) -> f64 {
        self.measure(slice).iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    /// Age of the initial Gaussian in units of the first stable step.
    pub smoothing_steps: usize,
    /// Fraction of the stable step used per substep.
    pub cfl: f64,
    /// Lowest time to integrate to; defaults to the trajectory start.
    pub t_min: Option<f64>,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { smoothing_steps: 10, cfl: 0.45, t_min: None }
    }
}

/// Kernel based at a pole (`node` = 0 or N) at time `t0`.
pub fn kernel_from_point(
    traj: &FlowTrajectory<WarpedMetric>,
    node: usize,
    t0: f64,
    opts: &KernelOptions,
) -> Result<ConjugateHeatFlow> {
    let g0 = traj.at(t0)?;
    let last = g0.grid_size();
    if node != 0 && node != last {
        return Err(Error::Precondition("kernels must be based at a pole".into()));
    }
    let t_min = opts.t_min.unwrap_or(traj.first_time());
    if t_min < traj.first_time() - 1e-12 || t_min > t0 {
        return Err(Error::Range(format!("t_min {t_min} outside the trajectory below t0 = {t0}")));
    }
    let mut geo = SliceGeometry::from_warped(&g0);
    let dt0 = opts.cfl * geo.stable_dt();
    let tau0 = opts.smoothing_steps as f64 * dt0;
    let pole_s = geo.coords[node];
    let n = g0.dim();
    let c = (4.0 * PI * tau0).powf(-(n as f64) / 2.0);
    let mut v: Vec<f64> = geo.coords.iter().map(|s| c * (-(s - pole_s).powi(2) / (4.0 * tau0)).exp()).collect();
    let mass: f64 = v.iter().zip(&geo.mass).map(|(a, b)| a * b).sum();
    v.iter_mut().for_each(|x| *x /= mass);
    geo.fill_poles(&mut v);

    let mut out = ConjugateHeatFlow {
        times: vec![t0],
        densities: vec![v.clone()],
        weights: vec![geo.mass.clone()],
        coords: vec![geo.coords.clone()],
        base: KernelBase::Pole { node, t0 },
        virtual_base: t0 + tau0,
        n,
        max_drift: 0.0,
        clipped: 0,
        smoothing_steps: opts.smoothing_steps,
    };
    let stops: Vec<f64> = traj.times.iter().rev().cloned().filter(|&t| t < t0 && t >= t_min).collect();
    let mut stops = stops;
    if stops.last().is_none_or(|&t| t > t_min + 1e-14) && t_min < t0 {
        stops.push(t_min);
    }
    let mut t = t0;
    for target in stops {
        while t > target {
            let mut dt = (opts.cfl * geo.stable_dt()).min(t - target);
            let (t_next, prev) = loop {
                let t_next = if t - dt <= target + 1e-14 * (1.0 + t.abs()) { target } else { t - dt };
                let prev = SliceGeometry::from_warped(&traj.at(t_next)?);
                if t - t_next <= opts.cfl * prev.stable_dt() * (1.0 + 1e-9) {
                    break (t_next, prev);
                }
                dt *= 0.5;
            };
            let (nv, log) = conjugate_step(&v, &geo, &prev, t - t_next).map_err(|e| e.at_stage("conjugate heat", t))?;
            out.max_drift = out.max_drift.max(log.drift);
            out.clipped += log.clipped;
            v = nv;
            geo = prev;
            t = t_next;
        }
        out.times.push(t);
        out.densities.push(v.clone());
        out.weights.push(geo.mass.clone());
        out.coords.push(geo.coords.clone());
    }
    Ok(out)
}

/// The uniform kernel on a homogeneous flow, sampled at `times` ≤ `t0`.
pub fn uniform_kernel(traj: &FlowTrajectory<HomogeneousMetric>, t0: f64, times: &[f64]) -> Result<ConjugateHeatFlow> {
    let mut ts: Vec<f64> = times.iter().cloned().filter(|&t| t <= t0).collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    let mut out = ConjugateHeatFlow {
        times: Vec::new(),
        densities: Vec::new(),
        weights: Vec::new(),
        coords: Vec::new(),
        base: KernelBase::Uniform { t0 },
        virtual_base: t0,
        n: traj.states[0].dim(),
        max_drift: 0.0,
        clipped: 0,
        smoothing_steps: 0,
    };
    for t in ts {
        let vol = traj.at(t)?.volume();
        out.times.push(t);
        out.densities.push(vec![1.0 / vol]);
        out.weights.push(vec![vol]);
        out.coords.push(vec![0.0]);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularKernelReport {
    pub kernel: ConjugateHeatFlow,
    /// Sup difference between consecutive iterates on the comparison window.
    pub cauchy: Vec<f64>,
    pub converged: bool,
}

/// Kernels based at (pole, t_i) with t_i increasing to the singular time, compared
/// on the stored slices at or below `window_top`.
pub fn singular_kernel(
    traj: &FlowTrajectory<WarpedMetric>,
    t_seq: &[f64],
    window_top: f64,
    tol: f64,
    opts: &KernelOptions,
) -> Result<SingularKernelReport> {
    if traj.singular_time_estimate.is_none() {
        return Err(Error::Precondition("trajectory carries no singular time estimate".into()));
    }
    if t_seq.is_empty() || t_seq.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("base times must increase".into()));
    }
    let mut kernels = Vec::with_capacity(t_seq.len());
    for &t in t_seq {
        kernels.push(kernel_from_point(traj, 0, t, opts)?);
    }
    let cauchy = kernels.windows(2).map(|w| window_distance(&w[0], &w[1], window_top)).collect::<Vec<_>>();
    let converged = cauchy.last().is_none_or(|&c| c <= tol);
    Ok(SingularKernelReport { kernel: kernels.pop().unwrap(), cauchy, converged })
}

/// Singular kernel on a homogeneous flow; every iterate is uniform.
pub fn singular_kernel_hom(
    traj: &FlowTrajectory<HomogeneousMetric>,
    t_seq: &[f64],
    window: &[f64],
) -> Result<SingularKernelReport> {
    if traj.singular_time_estimate.is_none() {
        return Err(Error::Precondition("trajectory carries no singular time estimate".into()));
    }
    let kernels = t_seq.iter().map(|&t| uniform_kernel(traj, t, window)).collect::<Result<Vec<_>>>()?;
    let top = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cauchy: Vec<f64> = kernels.windows(2).map(|w| window_distance(&w[0], &w[1], top)).collect();
    let mut kernels = kernels;
    Ok(SingularKernelReport { kernel: kernels.pop().unwrap(), converged: cauchy.iter().all(|&c| c == 0.0), cauchy })
}

fn window_distance(a: &ConjugateHeatFlow, b: &ConjugateHeatFlow, top: f64) -> f64 {
    let mut d: f64 = 0.0;
    for (i, &t) in a.times.iter().enumerate() {
        if t > top {
            continue;
        }
        if let Some(j) = b.times.iter().position(|&s| (s - t).abs() <= 1e-12 * (1.0 + t.abs())) {
            for (x, y) in a.densities[i].iter().zip(&b.densities[j]) {
                d = d.max((x - y).abs());
            }
        }
    }
    d
}

/// ∬ d(x,y)² dμ₁ dμ₂ on a line-embedded slice.
pub fn variance(mu1: &[f64], mu2: &[f64], coords: &[f64]) -> f64 {
    let mut v = 0.0;
    for (i, a) in mu1.iter().enumerate() {
        if *a == 0.0 {
            continue;
        }
        for (j, b) in mu2.iter().enumerate() {
            let d = coords[i] - coords[j];
            v += a * b * d * d;
        }
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub center: usize,
    pub center_coord: f64,
    pub var_to_center: f64,
    pub hn_bound: f64,
    pub margin: f64,
}

/// Grid point minimizing Var(δ_z, μ); ties go to the smaller coordinate.
pub fn hn_center(mu: &[f64], coords: &[f64], n: usize, t0: f64, t: f64) -> ConcentrationReport {
    let mut best = (0, f64::INFINITY);
    for (z, &cz) in coords.iter().enumerate() {
        let v: f64 = mu.iter().zip(coords).map(|(p, c)| p * (c - cz).powi(2)).sum();
        if v < best.1 * (1.0 - 1e-14) {
            best = (z, v);
        }
    }
    let bound = h_n(n) * (t0 - t);
    ConcentrationReport {
        center: best.0,
        center_coord: coords[best.0],
        var_to_center: best.1,
        hn_bound: bound,
        margin: bound - best.1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_ricci, Direction, RicciConfig};
    use approx::assert_relative_eq;

    #[test]
    fn flat_variance_grows_at_rate_two() {
        let geo = SliceGeometry::flat_segment(20.0, 400);
        let mut v: Vec<f64> = geo.coords.iter().map(|x| (-(x - 10.0).powi(2) / 0.4).exp()).collect();
        let m: f64 = v.iter().zip(&geo.mass).map(|(a, b)| a * b).sum();
        v.iter_mut().for_each(|x| *x /= m);
        let var = |v: &[f64]| {
            let p: Vec<f64> = v.iter().zip(&geo.mass).map(|(a, b)| a * b).collect();
            let mean: f64 = p.iter().zip(&geo.coords).map(|(a, b)| a * b).sum();
            p.iter().zip(&geo.coords).map(|(a, b)| a * (b - mean).powi(2)).sum::<f64>()
        };
        let v0 = var(&v);
        let dt = 0.4 * geo.stable_dt();
        let steps = (1.0 / dt).round() as usize;
        for _ in 0..steps {
            v = conjugate_step(&v, &geo, &geo, dt).unwrap().0;
        }
        assert_relative_eq!((var(&v) - v0) / (steps as f64 * dt), 2.0, max_relative = 1e-3);
    }

    #[test]
    fn uniform_density_stays_uniform() {
        let g = WarpedMetric::round_sphere(3, 2.0, 64).unwrap();
        let geo = SliceGeometry::from_warped(&g);
        let vol: f64 = geo.mass.iter().sum();
        let v = vec![1.0 / vol; geo.len()];
        let (w, log) = conjugate_step(&v, &geo, &geo, 0.4 * geo.stable_dt()).unwrap();
        assert!(w.iter().all(|x| (x * vol - 1.0).abs() < 1e-12));
        assert!(log.drift < 1e-12);
    }

    #[test]
    fn sphere_kernel_concentration() {
        let g = WarpedMetric::round_sphere(3, 2.0, 64).unwrap();
        let run = run_ricci(&g, &RicciConfig { store_every: 0.05, ..RicciConfig::adaptive(0.0, 0.5, 1e-3) }).unwrap();
        let k = kernel_from_point(&run.traj, 0, 0.5, &KernelOptions::default()).unwrap();
        assert!(k.max_drift < 1e-8, "drift {}", k.max_drift);
        for s in 0..k.len() {
            assert!((k.mass(s) - 1.0).abs() < 1e-6);
            let r = hn_center(&k.measure(s), &k.coords[s], 3, k.virtual_base, k.times[s]);
            assert!(r.margin >= 0.0, "slice {s}: {r:?}");
        }
        assert!(k.tau(0) > 0.0 && k.tau(0) < 0.05, "{}", k.tau(0));
        assert!(kernel_from_point(&run.traj, 5, 0.5, &KernelOptions::default()).is_err());
    }

    #[test]
    fn scalar_curvature_mean_follows_ricci_energy() {
        // d/dt ∫R dμ = ∫2|Ric|² dμ along a conjugate heat flow
        let g = WarpedMetric::perturbed_sphere(3, 2.0, 0.3, 128).unwrap();
        let run = run_ricci(&g, &RicciConfig { store_every: 0.01, ..RicciConfig::adaptive(0.0, 0.2, 1e-3) }).unwrap();
        let k = kernel_from_point(&run.traj, 0, 0.2, &KernelOptions::default()).unwrap();
        let moments = |s: usize| {
            let c = crate::geom::curvature(&run.traj.at(k.times[s]).unwrap()).unwrap();
            let mu = k.measure(s);
            let r: f64 = mu.iter().zip(&c.scalar).map(|(a, b)| a * b).sum();
            let q: f64 = (0..mu.len()).map(|i| mu[i] * 2.0 * (c.ric_rad[i].powi(2) + 2.0 * c.ric_sph[i].powi(2))).sum();
            (r, q)
        };
        let last = k.len() - 1;
        let mut energy = 0.0;
        // skip the first slices, where μ still spreads faster than the slice spacing resolves
        for s in 3..last {
            energy += 0.5 * (moments(s).1 + moments(s + 1).1) * (k.times[s] - k.times[s + 1]);
        }
        let change = moments(3).0 - moments(last).0;
        assert_relative_eq!(change, energy, max_relative = 2e-2);
    }

    #[test]
    fn variance_basics() {
        let c = [0.0, 1.0, 3.0];
        assert_eq!(variance(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &c), 0.0);
        assert_eq!(variance(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &c), 9.0);
    }

    #[test]
    fn centre_of_uniform_sphere_measure() {
        let g = WarpedMetric::round_sphere(3, 2.0, 128).unwrap();
        let geo = SliceGeometry::from_warped(&g);
        let vol: f64 = geo.mass.iter().sum();
        let mu: Vec<f64> = geo.mass.iter().map(|m| m / vol).collect();
        let r = hn_center(&mu, &geo.coords, 3, 1.0, 0.0);
        assert_relative_eq!(r.center_coord, PI, max_relative = 1e-12);
        let quad: f64 = {
            let m = 20000;
            let (mut a, mut b) = (0.0, 0.0);
            for k in 0..m {
                let s = (k as f64 + 0.5) / m as f64 * 2.0 * PI;
                let w = (s / 2.0).sin().powi(2);
                a += w * (s - PI).powi(2);
                b += w;
            }
            a / b
        };
        assert_relative_eq!(r.var_to_center, quad, max_relative = 1e-4);
    }

    #[test]
    fn singular_kernel_preconditions() {
        let g = WarpedMetric::round_sphere(3, 2.0, 32).unwrap();
        let tr = FlowTrajectory::new(vec![0.0], vec![g], Direction::Forward).unwrap();
        assert!(matches!(
            singular_kernel(&tr, &[0.0], 0.0, 1e-3, &KernelOptions::default()),
            Err(Error::Precondition(_))
        ));
    }
}
