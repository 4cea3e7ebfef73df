use serde::{Deserialize, Serialize};

use crate::geom::{curvature, curvature_hom, HomogeneousMetric, WarpedMetric};
use crate::{Error, Result};

/// Operations the trajectory machinery needs from a metric.
pub trait MetricState: Clone {
    /// State a fraction `theta` of the way from `self` to `other`.
    fn lerp(&self, other: &Self, theta: f64) -> Self;
    /// The metric multiplied by `factor` (not its square root).
    fn times(&self, factor: f64) -> Self;
    fn max_rm(&self) -> Result<f64>;
    fn same_structure(&self, other: &Self) -> bool;
}

impl MetricState for WarpedMetric {
    fn lerp(&self, other: &Self, theta: f64) -> Self {
        WarpedMetric::lerp(self, other, theta)
    }
    fn times(&self, factor: f64) -> Self {
        self.scaled(factor.sqrt())
    }
    fn max_rm(&self) -> Result<f64> {
        Ok(curvature(self)?.max_rm)
    }
    fn same_structure(&self, other: &Self) -> bool {
        self.dim() == other.dim() && self.grid_size() == other.grid_size()
    }
}

impl MetricState for HomogeneousMetric {
    fn lerp(&self, other: &Self, theta: f64) -> Self {
        HomogeneousMetric::lerp(self, other, theta)
    }
    fn times(&self, factor: f64) -> Self {
        self.scaled(factor.sqrt())
    }
    fn max_rm(&self) -> Result<f64> {
        Ok(curvature_hom(self).max_rm)
    }
    fn same_structure(&self, other: &Self) -> bool {
        self.factors().len() == other.factors().len()
            && self.factors().iter().zip(other.factors()).all(|(a, b)| a.kind == b.kind && a.dim == b.dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    BackwardRescaled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory<M> {
    pub times: Vec<f64>,
    pub states: Vec<M>,
    pub direction: Direction,
    pub singular_time_estimate: Option<f64>,
}

impl<M: MetricState> FlowTrajectory<M> {
    pub fn new(times: Vec<f64>, states: Vec<M>, direction: Direction) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return Err(Error::Shape(format!("{} times for {} states", times.len(), states.len())));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("trajectory times must increase strictly".into()));
        }
        if states.iter().any(|s| !s.same_structure(&states[0])) {
            return Err(Error::Shape("trajectory states differ in structure".into()));
        }
        Ok(Self { times, states, direction, singular_time_estimate: None })
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

    /// State at time `t`, linear in t between stored states.
    pub fn at(&self, t: f64) -> Result<M> {
        let (t0, t1) = (self.first_time(), self.last_time());
        let slack = 1e-12 * (1.0 + t0.abs().max(t1.abs()));
        if t < t0 - slack || t > t1 + slack {
            return Err(Error::Range(format!("time {t} outside trajectory [{t0}, {t1}]")));
        }
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            return Ok(self.states[0].clone());
        }
        if k >= self.len() {
            return Ok(self.states[self.len() - 1].clone());
        }
        let (a, b) = (self.times[k - 1], self.times[k]);
        Ok(self.states[k - 1].lerp(&self.states[k], (t - a) / (b - a)))
    }

    pub fn max_rm_series(&self) -> Result<Vec<f64>> {
        self.states.iter().map(M::max_rm).collect()
    }

    /// Same flow with time shifted so that `t0` becomes zero.
    pub fn shifted(&self, t0: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t - t0).collect(),
            states: self.states.clone(),
            direction: self.direction,
            singular_time_estimate: self.singular_time_estimate.map(|t| t - t0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RescaleMode {
    /// e^{-s} g at t = -e^{s}
    Ancient,
    /// e^{s} g at t = -e^{-s}
    Singular,
}

/// Rescaled flow sampled on `s_grid` (increasing). For singular mode the caller
/// shifts time so the singularity sits at 0.
pub fn dynamic_rescale<M: MetricState>(
    traj: &FlowTrajectory<M>,
    mode: RescaleMode,
    s_grid: &[f64],
) -> Result<FlowTrajectory<M>> {
    let mut states = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let (t, factor) = match mode {
            RescaleMode::Ancient => (-s.exp(), (-s).exp()),
            RescaleMode::Singular => (-(-s).exp(), s.exp()),
        };
        states.push(traj.at(t)?.times(factor));
    }
    let mut out = FlowTrajectory::new(s_grid.to_vec(), states, Direction::BackwardRescaled)?;
    out.singular_time_estimate = None;
    Ok(out)
}

/// Gauged rescaled flow: ḡ_s = ψ_s^* g̃_s with the μ series along s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugedTrajectory {
    pub s_times: Vec<f64>,
    pub gbar: Vec<WarpedMetric>,
    /// Monotone map of [0,1] per s, in the grid coordinate.
    pub psi: Vec<Vec<f64>>,
    pub mu_series: Vec<f64>,
    /// Ungauged rescaled states on the same s grid.
    pub ungauged: Vec<WarpedMetric>,
    /// Largest monotonicity repair applied to ψ.
    pub psi_repair: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescalingSequence {
    pub t: Vec<f64>,
    pub q: Vec<f64>,
    pub products: Vec<f64>,
}

impl RescalingSequence {
    pub fn new(t: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if t.len() != q.len() || t.is_empty() {
            return Err(Error::Shape("sequence lengths differ".into()));
        }
        let inc = t.windows(2).all(|w| w[1] > w[0]);
        let dec = t.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) {
            return Err(Error::Validation("rescaling times must be strictly monotone".into()));
        }
        if q.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Validation("scale factors must be positive".into()));
        }
        let products = t.iter().zip(&q).map(|(t, q)| t.abs() * q).collect();
        Ok(Self { t, q, products })
    }

    /// Default choice Q_i = max|Rm|(t_i).
    pub fn from_curvature<M: MetricState>(traj: &FlowTrajectory<M>, t: Vec<f64>) -> Result<Self> {
        let q = t.iter().map(|&ti| traj.at(ti)?.max_rm()).collect::<Result<Vec<_>>>()?;
        Self::new(t, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Factor;
    use approx::assert_relative_eq;

    fn shrinker(ts: &[f64]) -> FlowTrajectory<HomogeneousMetric> {
        let states = ts
            .iter()
            .map(|t| HomogeneousMetric::new(vec![Factor::sphere(3, (4.0 * t.abs()).sqrt())]).unwrap())
            .collect();
        FlowTrajectory::new(ts.to_vec(), states, Direction::Forward).unwrap()
    }

    #[test]
    fn ancient_rescale_of_shrinker_is_static() {
        let ts: Vec<f64> = (0..=60).map(|k| -(6.0 - 0.1 * k as f64).exp()).collect();
        let tr = shrinker(&ts);
        let s: Vec<f64> = (0..=50).map(|k| 0.1 * k as f64).collect();
        let r = dynamic_rescale(&tr, RescaleMode::Ancient, &s).unwrap();
        for st in &r.states {
            assert_relative_eq!(st.factors()[0].scale, 2.0, max_relative = 1e-12);
        }
        assert!(dynamic_rescale(&tr, RescaleMode::Ancient, &[7.0]).is_err());
    }

    #[test]
    fn singular_rescale_of_shrinker_is_static() {
        let ts: Vec<f64> = (0..=40).map(|k| -(-0.1 * k as f64).exp()).collect();
        let tr = shrinker(&ts);
        let s: Vec<f64> = (0..=30).map(|k| 0.1 * k as f64).collect();
        let r = dynamic_rescale(&tr, RescaleMode::Singular, &s).unwrap();
        for st in &r.states {
            assert_relative_eq!(st.factors()[0].scale, 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn flat_torus_shrinks_exponentially() {
        let ts: Vec<f64> = (0..=30).map(|k| -(3.0 - 0.1 * k as f64).exp()).collect();
        let g0 = HomogeneousMetric::new(vec![Factor::torus(3, 1.0)]).unwrap();
        let tr = FlowTrajectory::new(ts.clone(), vec![g0; ts.len()], Direction::Forward).unwrap();
        let r = dynamic_rescale(&tr, RescaleMode::Ancient, &[0.0, 1.0, 2.0]).unwrap();
        for (s, st) in r.times.iter().zip(&r.states) {
            assert_relative_eq!(st.factors()[0].scale, (-s / 2.0).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_unsorted_times() {
        let g = HomogeneousMetric::new(vec![Factor::torus(1, 1.0)]).unwrap();
        assert!(FlowTrajectory::new(vec![0.0, 0.0], vec![g.clone(), g], Direction::Forward).is_err());
        assert!(RescalingSequence::new(vec![1.0, 2.0], vec![1.0, 0.0]).is_err());
    }
}
