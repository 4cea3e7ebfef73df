use serde::{Deserialize, Serialize};

use super::{Factor, HomogeneousMetric, WarpedMetric};
use crate::Result;

/// On-disk form of either ansatz. Carries its own format version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetricDocument {
    Warped { format: u64, n: usize, grid_size: usize, u: Vec<f64>, phi: Vec<f64> },
    Homogeneous { format: u64, factors: Vec<Factor> },
}

pub const METRIC_FORMAT: u64 = 1;

impl From<&WarpedMetric> for MetricDocument {
    fn from(g: &WarpedMetric) -> Self {
        MetricDocument::Warped {
            format: METRIC_FORMAT,
            n: g.dim(),
            grid_size: g.grid_size(),
            u: g.u().to_vec(),
            phi: g.phi().to_vec(),
        }
    }
}

impl From<&HomogeneousMetric> for MetricDocument {
    fn from(g: &HomogeneousMetric) -> Self {
        MetricDocument::Homogeneous { format: METRIC_FORMAT, factors: g.factors().to_vec() }
    }
}

impl MetricDocument {
    pub fn format(&self) -> u64 {
        match self {
            MetricDocument::Warped { format, .. } | MetricDocument::Homogeneous { format, .. } => *format,
        }
    }

    pub fn into_warped(self) -> Result<WarpedMetric> {
        match self {
            MetricDocument::Warped { n, grid_size, u, phi, .. } => {
                if u.len() != grid_size + 1 {
                    return Err(crate::Error::Shape(format!("grid_size {grid_size} but {} samples", u.len())));
                }
                WarpedMetric::new(n, u, phi)
            }
            MetricDocument::Homogeneous { .. } => {
                Err(crate::Error::Validation("expected a warped metric document".into()))
            }
        }
    }

    pub fn into_homogeneous(self) -> Result<HomogeneousMetric> {
        match self {
            MetricDocument::Homogeneous { factors, .. } => HomogeneousMetric::new(factors),
            MetricDocument::Warped { .. } => {
                Err(crate::Error::Validation("expected a homogeneous metric document".into()))
            }
        }
    }
}
