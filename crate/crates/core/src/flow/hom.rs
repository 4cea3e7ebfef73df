use crate::flow::{Direction, FlowTrajectory};
use crate::geom::{Factor, FactorKind, HomogeneousMetric};
use crate::{Error, Result};

/// Time until the first round factor collapses, or None for a flat metric.
pub fn extinction_time(g: &HomogeneousMetric) -> Option<f64> {
    g.factors()
        .iter()
        .filter(|f| f.kind == FactorKind::RoundSphere)
        .map(|f| f.scale * f.scale / (2.0 * (f.dim as f64 - 1.0)))
        .min_by(f64::total_cmp)
}

/// Exact Ricci flow step: a² decreases by 2(p-1)dt on each round factor.
pub fn step_hom(g: &HomogeneousMetric, dt: f64) -> Result<HomogeneousMetric> {
    if !dt.is_finite() {
        return Err(Error::NonFinite("time step"));
    }
    if let Some(te) = extinction_time(g) {
        if dt >= te {
            return Err(Error::Extinction { after: te });
        }
    }
    let factors = g
        .factors()
        .iter()
        .map(|f| match f.kind {
            FactorKind::RoundSphere => {
                let a2 = f.scale * f.scale - 2.0 * (f.dim as f64 - 1.0) * dt;
                Factor { scale: a2.sqrt(), ..*f }
            }
            FactorKind::FlatTorus => *f,
        })
        .collect();
    Ok(HomogeneousMetric::from_factors_unchecked(factors))
}

/// Evaluates the exact flow from `(g0, t0)` at increasing `times`.
pub fn run_hom(g0: &HomogeneousMetric, t0: f64, times: &[f64]) -> Result<FlowTrajectory<HomogeneousMetric>> {
    let states = times
        .iter()
        .map(|&t| step_hom(g0, t - t0).map_err(|e| e.at_stage("homogeneous flow", t)))
        .collect::<Result<Vec<_>>>()?;
    let mut tr = FlowTrajectory::new(times.to_vec(), states, Direction::Forward)?;
    tr.singular_time_estimate = extinction_time(g0).map(|te| t0 + te);
    Ok(tr)
}
