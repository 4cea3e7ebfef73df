//! Numerical laboratory for Ricci flow entropy, rescaling and metric-flow diagnostics
//! on rotationally symmetric and homogeneous closed manifolds.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diag;
pub mod entropy;
pub mod error;
pub mod flow;
pub mod geom;
pub mod heat;
pub mod mflow;
pub mod runner;

pub use diag::{DichotomyKind, DichotomyVerdict, LojasiewiczFit};
pub use entropy::{EntropyReport, PotentialProfile};
pub use error::{Error, Result};
pub use flow::{Direction, FlowTrajectory, GaugedTrajectory, RescalingSequence};
pub use geom::{
    CurvatureProfile, DiscreteNorm, Factor, FactorKind, HomCurvature, HomogeneousMetric, MetricDocument, WarpedMetric,
};
pub use heat::{ConcentrationReport, ConjugateHeatFlow};
pub use mflow::{BadSet, FiniteMetricFlow, GluedSpace, MeasureFlow};

/// Volume of the unit round sphere of dimension `p`.
pub fn unit_sphere_volume(p: usize) -> f64 {
    let k = (p as f64 + 1.0) / 2.0;
    2.0 * std::f64::consts::PI.powf(k) / statrs::function::gamma::gamma(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn sphere_volumes() {
        assert_relative_eq!(unit_sphere_volume(1), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(unit_sphere_volume(2), 4.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(unit_sphere_volume(3), 2.0 * PI * PI, max_relative = 1e-14);
    }
}
