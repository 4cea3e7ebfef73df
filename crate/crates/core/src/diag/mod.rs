//! Theorem-level diagnostics on flows and rescaling sequences.

mod dichotomy;
mod fit;
mod gauge;
mod noncollapse;
mod sobolev;

pub use dichotomy::{
    classify_dichotomy, classify_dichotomy_with, DichotomyKind, DichotomyState, DichotomyTolerances, DichotomyVerdict,
};
pub use fit::{lojasiewicz_exponent, lojasiewicz_fit, rate_consistency, GradientFit, LojasiewiczFit, MIN_FIT_POINTS};
pub use gauge::{gauge_compare, ScalarProfile};
pub use noncollapse::{noncollapse_check, noncollapse_factor, NoncollapseProbe};
pub use sobolev::{
    estimate_sobolev, log_sobolev_constant, sharp_sobolev_a, sobolev_nu_bound, NuFloorReport, NuFloorTarget,
    SobolevConstants,
};

use serde::{Deserialize, Serialize};

use crate::flow::{curvature_growth_margins, RicciRun};
use crate::{Error, RescalingSequence, Result};

/// Lower bound on |t|·max|Rm| for flows that become singular.
pub const TYPE_ONE_FLOOR: f64 = 0.125;

/// Products are called unbounded when their log-log trend exceeds this slope
/// and they spread by more than `UNBOUNDED_SPREAD`.
const UNBOUNDED_SLOPE: f64 = 0.1;
const UNBOUNDED_SPREAD: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeOneReport {
    pub t: Vec<f64>,
    pub products: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// Slope of ln(|t|Q) against ln|t|.
    pub slope: f64,
    pub bounded: bool,
    /// min ≥ 1/8, the singular-flow lower bound.
    pub above_floor: bool,
    /// Maximum-principle margins 1/Rm(t_last) + 8(t_last − t) − 1/Rm(t) when available.
    pub growth_min_margin: Option<f64>,
}

/// Least-squares slope of y against x.
pub(crate) fn ls_slope(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let rms = (x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, rms)
}

pub(crate) fn products_bounded(t: &[f64], products: &[f64]) -> (f64, bool) {
    let min = products.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = products.iter().cloned().fold(0.0, f64::max);
    if products.len() < 2 {
        return (0.0, true);
    }
    let lx: Vec<f64> = t.iter().map(|v| v.abs().ln()).collect();
    let ly: Vec<f64> = products.iter().map(|v| v.ln()).collect();
    let (slope, _, _) = ls_slope(&lx, &ly);
    (slope, !(slope.abs() > UNBOUNDED_SLOPE && max > UNBOUNDED_SPREAD * min))
}

/// Products |t_i|·Q_i of a rescaling sequence with their trend.
pub fn type_one_report(seq: &RescalingSequence) -> TypeOneReport {
    let min = seq.products.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = seq.products.iter().cloned().fold(0.0, f64::max);
    let (slope, bounded) = products_bounded(&seq.t, &seq.products);
    TypeOneReport {
        t: seq.t.clone(),
        products: seq.products.clone(),
        min,
        max,
        slope,
        bounded,
        above_floor: min >= TYPE_ONE_FLOOR,
        growth_min_margin: None,
    }
}

/// Type I report for a run that stopped at a singularity. Times are measured
/// from the extrapolated singular time T and sampled where
/// `window.0·(T − t0) ≤ T − t ≤ window.1·(T − t0)`.
pub fn type_one_from_run(run: &RicciRun, window: (f64, f64)) -> Result<TypeOneReport> {
    let big_t = run
        .traj
        .singular_time_estimate
        .ok_or_else(|| Error::Precondition("run has no singular time estimate".into()))?;
    let span = big_t - run.traj.first_time();
    let (mut t, mut q) = (Vec::new(), Vec::new());
    for (ti, rm) in run.traj.times.iter().zip(&run.max_rm) {
        let left = big_t - ti;
        if left >= window.0 * span && left <= window.1 * span {
            t.push(ti - big_t);
            q.push(*rm);
        }
    }
    if t.len() < 2 {
        return Err(Error::Precondition(format!("only {} stored times in the window", t.len())));
    }
    let seq = RescalingSequence::new(t, q)?;
    let mut report = type_one_report(&seq);
    let margins = curvature_growth_margins(&run.traj.times, &run.max_rm);
    report.growth_min_margin = Some(margins.iter().cloned().fold(f64::INFINITY, f64::min));
    Ok(report)
}

/// ∫₀^θ sin^k by composite Simpson.
pub(crate) fn sin_power_integral(k: usize, theta: f64) -> f64 {
    let m = 2000;
    let h = theta / m as f64;
    let f = |x: f64| x.sin().powi(k as i32);
    let mut s = f(0.0) + f(theta);
    for i in 1..m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_ricci, RicciConfig};
    use crate::WarpedMetric;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_products_are_constant() {
        let t: Vec<f64> = (1..=20).map(|k| -(0.5f64).powi(k)).collect();
        let q: Vec<f64> = t.iter().map(|t| 12f64.sqrt() / (4.0 * t.abs())).collect();
        let r = type_one_report(&RescalingSequence::new(t, q).unwrap());
        assert_relative_eq!(r.min, 0.75f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(r.max, 0.75f64.sqrt(), max_relative = 1e-12);
        assert!(r.bounded && r.above_floor);
    }

    #[test]
    fn adversarial_torus_products_diverge() {
        let t: Vec<f64> = (0..20).map(|k| -(10f64).powf(k as f64 * 0.3)).collect();
        let q: Vec<f64> = t.iter().map(|t| t.abs().powf(-0.5)).collect();
        let r = type_one_report(&RescalingSequence::new(t, q).unwrap());
        assert!(!r.bounded);
        assert_relative_eq!(r.slope, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn sphere_run_is_type_one() {
        let g = WarpedMetric::round_sphere(3, 2.0, 64).unwrap();
        let run = run_ricci(&g, &RicciConfig::adaptive(0.0, 2.0, 1e-3)).unwrap();
        let r = type_one_from_run(&run, (0.02, 0.5)).unwrap();
        assert!(r.bounded && r.above_floor, "{r:?}");
        assert!(r.min > 0.8 && r.max < 0.95, "{} {}", r.min, r.max);
        assert!(r.growth_min_margin.unwrap() > -1e-3);
    }

    #[test]
    fn simpson_matches_closed_form() {
        assert_relative_eq!(
            sin_power_integral(2, std::f64::consts::PI),
            std::f64::consts::FRAC_PI_2,
            max_relative = 1e-12
        );
        assert_relative_eq!(sin_power_integral(1, 1.0), 1.0 - 1f64.cos(), max_relative = 1e-12);
    }
}
