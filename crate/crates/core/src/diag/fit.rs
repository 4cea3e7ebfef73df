use serde::{Deserialize, Serialize};

use super::ls_slope;
use crate::{Error, Result};

pub const MIN_FIT_POINTS: usize = 8;

/// Power-law fit value ≈ C·x^{−β} on log-log data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LojasiewiczFit {
    /// Exponent implied by β through β = 1/(2α − 1); meaningful for μ-gap series.
    pub alpha: f64,
    pub c: f64,
    pub beta: f64,
    /// RMS residual in log space.
    pub residual: f64,
    /// Axis range of the points used.
    pub window: (f64, f64),
    pub points: usize,
    /// The series hit `floor` and was truncated there.
    pub floor_reached: bool,
}

/// Fits `values ≈ C·axis^{−β}`. The series is cut at the first value at or
/// below `floor`; fewer than eight remaining points is an error.
pub fn lojasiewicz_fit(values: &[f64], axis: &[f64], floor: f64) -> Result<LojasiewiczFit> {
    if values.len() != axis.len() {
        return Err(Error::Shape(format!("{} values on {} axis points", values.len(), axis.len())));
    }
    let cut = values.iter().position(|v| !(*v > floor)).unwrap_or(values.len());
    if cut < MIN_FIT_POINTS {
        return Err(Error::Precondition(format!(
            "{cut} points above the floor {floor:e}; a fit needs {MIN_FIT_POINTS}"
        )));
    }
    let (v, x) = (&values[..cut], &axis[..cut]);
    if x.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(Error::Range("fit axis must be positive".into()));
    }
    let lx: Vec<f64> = x.iter().map(|a| a.ln()).collect();
    let ly: Vec<f64> = v.iter().map(|a| a.ln()).collect();
    let (slope, icpt, residual) = ls_slope(&lx, &ly);
    let beta = -slope;
    Ok(LojasiewiczFit {
        alpha: 0.5 * (1.0 + 1.0 / beta),
        c: icpt.exp(),
        beta,
        residual,
        window: (x[0], x[cut - 1]),
        points: cut,
        floor_reached: cut < values.len(),
    })
}

/// Fit of ‖∇μ‖ ≈ C·gap^α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientFit {
    pub alpha: f64,
    pub c: f64,
    pub residual: f64,
    pub points: usize,
}

/// Exponent α in ‖∇μ‖ ≥ C|μ₀ − μ|^α from paired samples; pairs with either
/// entry at or below `floor` are dropped.
pub fn lojasiewicz_exponent(gap: &[f64], grad: &[f64], floor: f64) -> Result<GradientFit> {
    if gap.len() != grad.len() {
        return Err(Error::Shape(format!("{} gaps and {} gradients", gap.len(), grad.len())));
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) =
        gap.iter().zip(grad).filter(|(a, b)| **a > floor && **b > floor).map(|(a, b)| (a.ln(), b.ln())).unzip();
    if lx.len() < MIN_FIT_POINTS {
        return Err(Error::Precondition(format!("{} usable pairs; a fit needs {MIN_FIT_POINTS}", lx.len())));
    }
    let (alpha, icpt, residual) = ls_slope(&lx, &ly);
    Ok(GradientFit { alpha, c: icpt.exp(), residual, points: lx.len() })
}

/// |β(2α − 1) − 1|, which vanishes when the decay rate matches the gradient exponent.
pub fn rate_consistency(alpha: f64, beta: f64) -> f64 {
    (beta * (2.0 * alpha - 1.0) - 1.0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let s: Vec<f64> = (1..=20).map(|k| k as f64).collect();
        let v: Vec<f64> = s.iter().map(|s| 7.0 / (s * s)).collect();
        let f = lojasiewicz_fit(&v, &s, 0.0).unwrap();
        assert_relative_eq!(f.c, 7.0, max_relative = 1e-6);
        assert_relative_eq!(f.beta, 2.0, max_relative = 1e-6);
        assert_relative_eq!(f.alpha, 0.75, max_relative = 1e-6);
        assert!(!f.floor_reached && f.residual < 1e-12);
    }

    #[test]
    fn floor_series_has_no_fit() {
        let s: Vec<f64> = (1..=20).map(|k| k as f64).collect();
        assert!(lojasiewicz_fit(&[1e-15; 20], &s, 1e-12).is_err());
        let v: Vec<f64> = s.iter().map(|s| if *s < 12.0 { 1.0 / s } else { 0.0 }).collect();
        let f = lojasiewicz_fit(&v, &s, 1e-12).unwrap();
        assert!(f.floor_reached);
        assert_eq!(f.points, 11);
    }

    #[test]
    fn gradient_exponent_matches_rate() {
        // gap ~ s^{-β} with ‖∇μ‖ ~ gap^α and β = 1/(2α − 1)
        let alpha: f64 = 0.7;
        let beta = 1.0 / (2.0 * alpha - 1.0);
        let s: Vec<f64> = (1..=30).map(|k| k as f64).collect();
        let gap: Vec<f64> = s.iter().map(|s| s.powf(-beta)).collect();
        let grad: Vec<f64> = gap.iter().map(|g| 3.0 * g.powf(alpha)).collect();
        let gf = lojasiewicz_exponent(&gap, &grad, 0.0).unwrap();
        let rf = lojasiewicz_fit(&gap, &s, 0.0).unwrap();
        assert_relative_eq!(gf.alpha, alpha, max_relative = 1e-9);
        assert!(rate_consistency(gf.alpha, rf.beta) < 1e-9);
    }

    proptest! {
        #[test]
        fn recovers_any_power_law(c in 0.1f64..10.0, beta in 0.2f64..4.0) {
            let s: Vec<f64> = (0..12).map(|k| 1.5f64.powi(k)).collect();
            let v: Vec<f64> = s.iter().map(|s| c * s.powf(-beta)).collect();
            let f = lojasiewicz_fit(&v, &s, 0.0).unwrap();
            prop_assert!((f.beta - beta).abs() < 1e-9 * beta.max(1.0));
            prop_assert!((f.c / c - 1.0).abs() < 1e-8);
        }
    }
}
