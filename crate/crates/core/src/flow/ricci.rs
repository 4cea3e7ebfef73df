use serde::{Deserialize, Serialize};

use crate::flow::gauge::{advance_uniform, to_uniform_gauge, GaugedRate};
use crate::flow::{Direction, FlowTrajectory};
use crate::geom::{curvature, WarpedMetric};
use crate::{Error, Result};

/// Largest stable step: 0.25·(min arclength spacing)² / max(1, max|Rm|).
pub fn cfl_bound(g: &WarpedMetric) -> Result<f64> {
    let c = curvature(g)?;
    let ds = g.min_spacing();
    Ok(0.25 * ds * ds / c.max_rm.max(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SingularSignal {
    /// An interior neck thinner than five grid spacings.
    Neck { node: usize, radius: f64 },
    /// max|Rm| exceeded 1/(10 dt).
    Curvature { max_rm: f64 },
    /// The adaptive step fell below the configured floor.
    StepCollapse { dt: f64 },
    /// The warping function reached zero inside the interval.
    Pinched,
}

#[derive(Clone, Debug)]
pub struct Step {
    pub metric: WarpedMetric,
    pub singular: Option<SingularSignal>,
}

fn rhs(g: &WarpedMetric) -> Result<GaugedRate> {
    let c = curvature(g)?;
    let du: Vec<f64> = g.u().iter().zip(&c.ric_rad).map(|(u, r)| -r * u).collect();
    let dphi: Vec<f64> = g.phi().iter().zip(&c.ric_sph).map(|(p, r)| -r * p).collect();
    Ok(to_uniform_gauge(g, &du, &dphi))
}

/// Grid velocity of material points under the Ricci flow at `g` (constant-speed gauge).
pub(crate) fn material_velocity(g: &WarpedMetric) -> Result<Vec<f64>> {
    Ok(rhs(g)?.velocity)
}

fn is_pinch(e: &Error) -> bool {
    matches!(e, Error::Degenerate(_) | Error::InvalidMetric(_))
}

/// One Heun step of ∂t g = −2 Ric, returned in the constant-speed gauge.
pub fn step_ricci(g: &WarpedMetric, dt: f64) -> Result<Step> {
    let uniform;
    let g = if g.is_uniform() {
        g
    } else {
        uniform = g.uniformized()?;
        &uniform
    };
    let bound = cfl_bound(g)?;
    if !(dt > 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, bound });
    }
    let k1 = rhs(g)?;
    let mid = match advance_uniform(g, &[&k1], &[1.0], dt) {
        Ok(m) => m,
        Err(e) if is_pinch(&e) => return Ok(Step { metric: g.clone(), singular: Some(SingularSignal::Pinched) }),
        Err(e) => return Err(e),
    };
    let k2 = rhs(&mid)?;
    let next = match advance_uniform(g, &[&k1, &k2], &[0.5, 0.5], dt) {
        Ok(m) => m,
        Err(e) if is_pinch(&e) => return Ok(Step { metric: g.clone(), singular: Some(SingularSignal::Pinched) }),
        Err(e) => return Err(e),
    };
    let ds = next.min_spacing();
    let mut singular = None;
    if let Some((node, radius)) = next.neck() {
        if radius < 5.0 * ds {
            singular = Some(SingularSignal::Neck { node, radius });
        }
    }
    let max_rm = curvature(&next)?.max_rm;
    if singular.is_none() && max_rm > 1.0 / (10.0 * dt) {
        singular = Some(SingularSignal::Curvature { max_rm });
    }
    Ok(Step { metric: next, singular })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DtPolicy {
    /// Constant step; exceeding the stability bound is an error.
    Fixed { dt: f64 },
    /// min(dt_max, bound); stops with a singular signal once the bound drops
    /// below `floor`·dt_max.
    Adaptive { dt_max: f64, floor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RicciConfig {
    pub t0: f64,
    pub t_end: f64,
    pub dt: DtPolicy,
    /// Store a state at least this often in t.
    pub store_every: f64,
    /// Also store when max|Rm| changed by this relative amount.
    pub rm_change: f64,
    pub max_steps: usize,
}

impl RicciConfig {
    pub fn adaptive(t0: f64, t_end: f64, dt_max: f64) -> Self {
        Self {
            t0,
            t_end,
            dt: DtPolicy::Adaptive { dt_max, floor: 1e-2 },
            store_every: 1e-2 * (t_end - t0),
            rm_change: 0.02,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RicciRun {
    pub traj: FlowTrajectory<WarpedMetric>,
    pub max_rm: Vec<f64>,
    pub min_scalar: Vec<f64>,
    pub steps: usize,
    pub stop: Option<SingularSignal>,
}

/// Integrates from `cfg.t0` until `cfg.t_end` or a singular signal.
pub fn run_ricci(g0: &WarpedMetric, cfg: &RicciConfig) -> Result<RicciRun> {
    if !(cfg.t_end > cfg.t0) {
        return Err(Error::Validation("t_end must exceed t0".into()));
    }
    let mut g = g0.uniformized()?;
    let mut t = cfg.t0;
    let c0 = curvature(&g)?;
    let mut times = vec![t];
    let mut states = vec![g.clone()];
    let mut max_rm = vec![c0.max_rm];
    let mut min_scalar = vec![c0.min_scalar()];
    let mut steps = 0;
    let mut stop = None;
    let span = cfg.t_end - cfg.t0;
    while t < cfg.t_end - 1e-12 * span {
        if steps >= cfg.max_steps {
            return Err(Error::Range(format!("step budget {} exhausted at t = {t}", cfg.max_steps)));
        }
        let remaining = cfg.t_end - t;
        let (dt, nominal) = match cfg.dt {
            DtPolicy::Fixed { dt } => (dt.min(remaining), dt),
            DtPolicy::Adaptive { dt_max, floor } => {
                let bound = cfl_bound(&g).map_err(|e| e.at_stage("ricci flow", t))?;
                if bound < floor * dt_max && remaining > bound {
                    stop = Some(SingularSignal::StepCollapse { dt: bound });
                    break;
                }
                (dt_max.min(bound).min(remaining), dt_max)
            }
        };
        let step = step_ricci(&g, dt).map_err(|e| e.at_stage("ricci flow", t))?;
        steps += 1;
        if matches!(step.singular, Some(SingularSignal::Pinched)) {
            stop = step.singular;
            break;
        }
        g = step.metric;
        t += dt;
        let c = curvature(&g).map_err(|e| e.at_stage("ricci flow", t))?;
        let last_rm = *max_rm.last().unwrap();
        let due = t - times.last().unwrap() >= cfg.store_every
            || (c.max_rm - last_rm).abs() > cfg.rm_change * last_rm
            || t >= cfg.t_end - 1e-12 * span;
        let signal = step.singular.filter(|s| match s {
            SingularSignal::Curvature { max_rm } => *max_rm > 1.0 / (10.0 * nominal),
            _ => true,
        });
        if due || signal.is_some() {
            times.push(t);
            states.push(g.clone());
            max_rm.push(c.max_rm);
            min_scalar.push(c.min_scalar());
        }
        if signal.is_some() {
            stop = signal;
            break;
        }
    }
    let mut traj = FlowTrajectory::new(times, states, Direction::Forward)?;
    if stop.is_some() {
        traj.singular_time_estimate = extrapolate_singular_time(&traj.times, &max_rm);
    }
    Ok(RicciRun { traj, max_rm, min_scalar, steps, stop })
}

/// Linear extrapolation of 1/max|Rm| to zero over the last stretch where it halved.
fn extrapolate_singular_time(times: &[f64], max_rm: &[f64]) -> Option<f64> {
    let k = times.len() - 1;
    let inv_last = 1.0 / max_rm[k];
    let j = (0..k).rev().find(|&j| 1.0 / max_rm[j] >= 1.5 * inv_last).unwrap_or(0);
    if j == k {
        return None;
    }
    let slope = (inv_last - 1.0 / max_rm[j]) / (times[k] - times[j]);
    (slope < 0.0).then(|| times[k] - inv_last / slope)
}

/// For each stored time t: 1/Rm(t_last) + 8(t_last − t) − 1/Rm(t), which the
/// maximum principle keeps nonnegative.
pub fn curvature_growth_margins(times: &[f64], max_rm: &[f64]) -> Vec<f64> {
    let k = times.len() - 1;
    times.iter().zip(max_rm).map(|(t, r)| 1.0 / max_rm[k] + 8.0 * (times[k] - t) - 1.0 / r).collect()
}
