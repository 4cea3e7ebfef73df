use serde::{Deserialize, Serialize};

use crate::entropy::{mu_minimize_with, MinimizerOptions, Starts};
use crate::flow::gauge::{advance_uniform, to_uniform_gauge};
use crate::flow::{dynamic_rescale, run_ricci, GaugedTrajectory, RescaleMode, RicciConfig};
use crate::geom::{curvature, WarpedMetric};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModifiedDirection {
    Forward,
    Backward,
}

#[derive(Clone, Debug)]
pub struct ModifiedStep {
    pub metric: WarpedMetric,
    /// Displacement of the grid coordinate over the step.
    pub psi_increment: Vec<f64>,
    /// μ(g, 1) of the input metric.
    pub mu: f64,
    /// Minimizer of the input, usable as a warm start.
    pub w: Vec<f64>,
}

fn gauge_minimizer(g: &WarpedMetric, warm: Option<Vec<f64>>) -> Result<crate::entropy::Minimizer> {
    let opts = MinimizerOptions { starts: Starts::Constant, warm_start: warm, ..Default::default() };
    mu_minimize_with(g, 1.0, &opts).map_err(|e| match e {
        Error::MinimizerFailure { iterations, grad_norm } => Error::GaugeUndefined(format!(
            "minimizer stalled after {iterations} iterations at gradient norm {grad_norm:e}"
        )),
        other => other,
    })
}

/// (du, dφ, ξ, μ, minimizer w)
type ModifiedRhs = (Vec<f64>, Vec<f64>, Vec<f64>, f64, Vec<f64>);

/// Right-hand side in (u, φ) and the gauge field ξ in the grid coordinate.
fn modified_rhs(g: &WarpedMetric, sign: f64, warm: Option<Vec<f64>>) -> Result<ModifiedRhs> {
    let min = gauge_minimizer(g, warm)?;
    let c = curvature(g)?;
    let (fs, _) = g.scalar_derivs(&min.potential.f);
    let d = g.derivatives();
    let (u, phi) = (g.u(), g.phi());
    // ξ u = sign·f_s, with sign −1 forward and +1 backward
    let xi_u: Vec<f64> = fs.iter().map(|v| sign * v).collect();
    let dxi_u = g.odd_dx(&xi_u);
    let m = u.len();
    let mut du = vec![0.0; m];
    let mut dphi = vec![0.0; m];
    let mut xi = vec![0.0; m];
    for i in 0..m {
        xi[i] = xi_u[i] / u[i];
        du[i] = sign * (c.ric_rad[i] - 0.5) * u[i] + dxi_u[i];
        dphi[i] = sign * (c.ric_sph[i] - 0.5) * phi[i] + xi[i] * d.phi_s[i] * u[i];
    }
    Ok((du, dphi, xi, min.mu, min.potential.w))
}

/// One Heun step of ∂t g = ∓2(Ric + ∇²f_g − g/2) with f_g the minimizer at τ = 1.
pub fn step_modified(
    g: &WarpedMetric,
    direction: ModifiedDirection,
    dt: f64,
    warm: Option<Vec<f64>>,
) -> Result<ModifiedStep> {
    let bound = crate::flow::cfl_bound(g)?;
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, bound });
    }
    let sign = match direction {
        ModifiedDirection::Forward => -1.0,
        ModifiedDirection::Backward => 1.0,
    };
    let uniform;
    let g = if g.is_uniform() {
        g
    } else {
        uniform = g.uniformized()?;
        &uniform
    };
    let (du1, dp1, xi1, mu, w) = modified_rhs(g, sign, warm)?;
    let k1 = to_uniform_gauge(g, &du1, &dp1);
    let mid = advance_uniform(g, &[&k1], &[1.0], dt)?;
    let (du2, dp2, xi2, _, _) = modified_rhs(&mid, sign, Some(w.clone()))?;
    let k2 = to_uniform_gauge(&mid, &du2, &dp2);
    let metric = advance_uniform(g, &[&k1, &k2], &[0.5, 0.5], dt)?;
    let psi_increment = xi1.iter().zip(&xi2).map(|(a, b)| 0.5 * dt * (a + b)).collect();
    Ok(ModifiedStep { metric, psi_increment, mu, w })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeOptions {
    pub n: usize,
    pub grid_size: usize,
    /// The rescaled window is s ∈ [0, s_max].
    pub s_max: f64,
    pub ds: f64,
    /// Relative size of the scale mode at s = 0.
    pub delta: f64,
    /// Relative shape perturbation of the initial data.
    pub shape_eps: f64,
    pub dt_max: f64,
}

impl Default for GaugeOptions {
    fn default() -> Self {
        Self { n: 3, grid_size: 128, s_max: 6.0, ds: 0.1, delta: 0.05, shape_eps: 0.0, dt_max: 0.05 }
    }
}

fn interp_linear(v: &[f64], y: f64) -> f64 {
    let m = v.len() - 1;
    let pos = (y.clamp(0.0, 1.0)) * m as f64;
    let k = (pos.floor() as usize).min(m - 1);
    let t = pos - k as f64;
    v[k] + t * (v[k + 1] - v[k])
}

/// Gauge field f_s/u of the τ = 1 minimizer: the grid-coordinate speed of ∇f.
fn gauge_field(g: &WarpedMetric, warm: Option<Vec<f64>>) -> Result<(Vec<f64>, Vec<f64>)> {
    let min = gauge_minimizer(g, warm)?;
    let (fs, _) = g.scalar_derivs(&min.potential.f);
    let v = fs.iter().zip(g.u()).map(|(a, b)| a / b).collect();
    Ok((v, min.potential.w))
}

/// Ancient flow ending at the normalized sphere with a scale mode of size `delta`,
/// rescaled, and gauged by ∂_s ψ = ∇f ∘ ψ so that ḡ_s follows the backward
/// modified flow in s.
pub fn gauged_ancient_flow(opts: &GaugeOptions) -> Result<GaugedTrajectory> {
    if opts.n < 3 {
        return Err(Error::Validation("gauged flow needs n >= 3".into()));
    }
    if !(opts.ds > 0.0 && opts.s_max > opts.ds) {
        return Err(Error::Validation("need 0 < ds < s_max".into()));
    }
    // start one rescaled step early so every sampled state has been flowed
    let t0 = -(opts.s_max + opts.ds).exp();
    let a2 = 2.0 * (opts.n as f64 - 1.0) * (-t0 + opts.delta);
    let g0 = WarpedMetric::perturbed_sphere(opts.n, a2.sqrt(), opts.shape_eps, opts.grid_size)?;
    let mut cfg = RicciConfig::adaptive(t0, -1.0, opts.dt_max);
    cfg.store_every = 0.02;
    cfg.rm_change = 0.005;
    let run = run_ricci(&g0, &cfg).map_err(|e| e.at_stage("ancient flow", t0))?;
    if let Some(sig) = run.stop {
        return Err(Error::Precondition(format!("ancient flow hit a singular signal: {sig:?}")));
    }
    let count = (opts.s_max / opts.ds).floor() as usize + 1;
    let s_grid: Vec<f64> = (0..count).map(|k| k as f64 * opts.ds).collect();
    let rescaled = dynamic_rescale(&run.traj, RescaleMode::Ancient, &s_grid)?;
    let m = opts.grid_size + 1;
    let mut psi: Vec<f64> = (0..m).map(|i| i as f64 / opts.grid_size as f64).collect();
    let mut psis = Vec::with_capacity(count);
    let mut gbar = Vec::with_capacity(count);
    let mut mu_series = Vec::with_capacity(count);
    let mut repair: f64 = 0.0;
    let (mut v_now, mut warm) = gauge_field(&rescaled.states[0], None)?;
    for k in 0..count {
        let gt = &rescaled.states[k];
        let gb = gt.pullback(&psi)?;
        let mu = gauge_minimizer(&gb, Some(warm.clone())).map_err(|e| e.at_stage("gauge minimizer", s_grid[k]))?.mu;
        mu_series.push(mu);
        gbar.push(gb);
        psis.push(psi.clone());
        if k + 1 == count {
            break;
        }
        let ds = s_grid[k + 1] - s_grid[k];
        let (v_next, w_next) = gauge_field(&rescaled.states[k + 1], Some(warm.clone()))
            .map_err(|e| e.at_stage("gauge field", s_grid[k + 1]))?;
        let pred: Vec<f64> = psi.iter().map(|&y| y + ds * interp_linear(&v_now, y)).collect();
        let mut next: Vec<f64> = psi
            .iter()
            .zip(&pred)
            .map(|(&y, &p)| y + 0.5 * ds * (interp_linear(&v_now, y) + interp_linear(&v_next, p)))
            .collect();
        repair = repair.max(repair_monotone(&mut next));
        psi = next;
        v_now = v_next;
        warm = w_next;
    }
    Ok(GaugedTrajectory { s_times: s_grid, gbar, psi: psis, mu_series, ungauged: rescaled.states, psi_repair: repair })
}

/// Sort, clip to [0,1] and pin the endpoints; returns the largest change.
fn repair_monotone(psi: &mut [f64]) -> f64 {
    let before = psi.to_vec();
    psi.sort_by(f64::total_cmp);
    let last = psi.len() - 1;
    for v in psi.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    psi[0] = 0.0;
    psi[last] = 1.0;
    psi.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::metric_distance;

    #[test]
    fn shrinker_is_fixed_point() {
        let g = WarpedMetric::round_sphere(3, 2.0, 64).unwrap();
        let dt = 0.5 * crate::flow::cfl_bound(&g).unwrap();
        for dir in [ModifiedDirection::Forward, ModifiedDirection::Backward] {
            let st = step_modified(&g, dir, dt, None).unwrap();
            assert!(metric_distance(&st.metric, &g, 0).unwrap().value < 1e-6);
            assert!(st.psi_increment.iter().all(|v| v.abs() < 1e-8));
        }
    }

    #[test]
    fn backward_steps_lower_mu() {
        let mut g = WarpedMetric::perturbed_sphere(3, 2.0, 0.2, 64).unwrap();
        let mut mus = Vec::new();
        let mut warm = None;
        for _ in 0..6 {
            let dt = 0.25 * crate::flow::cfl_bound(&g).unwrap();
            let st = step_modified(&g, ModifiedDirection::Backward, dt, warm).unwrap();
            mus.push(st.mu);
            warm = Some(st.w);
            g = st.metric;
        }
        assert!(mus.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{mus:?}");
    }

    #[test]
    fn forward_steps_raise_mu() {
        let mut g = WarpedMetric::perturbed_sphere(3, 2.0, 0.2, 64).unwrap();
        let mut mus = Vec::new();
        for _ in 0..20 {
            let dt = 0.5 * crate::flow::cfl_bound(&g).unwrap();
            let st = step_modified(&g, ModifiedDirection::Forward, dt, None).unwrap();
            mus.push(st.mu);
            g = st.metric;
        }
        assert!(mus.windows(2).all(|w| w[1] >= w[0] - 1e-10), "{mus:?}");
    }

    #[test]
    fn repair_sorts_and_pins() {
        let mut p = vec![0.01, 0.3, 0.2, 1.1];
        let r = repair_monotone(&mut p);
        assert_eq!(p, vec![0.0, 0.2, 0.3, 1.0]);
        assert!((r - 0.1).abs() < 1e-12);
    }
}
