//! Rotationally symmetric and homogeneous metrics on closed manifolds.

mod doc;
mod homogeneous;
mod warped;

pub use doc::MetricDocument;
pub use homogeneous::{curvature_hom, metric_distance_hom, Factor, FactorKind, HomCurvature, HomogeneousMetric};
pub use warped::{curvature, metric_distance, CurvatureProfile, DiscreteNorm, WarpedMetric, POLE_TOLERANCE};
