use serde::{Deserialize, Serialize};

use crate::{unit_sphere_volume, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorKind {
    RoundSphere,
    FlatTorus,
}

/// A round sphere of radius `scale` or a flat cube torus of side `scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub kind: FactorKind,
    pub dim: usize,
    pub scale: f64,
}

impl Factor {
    pub fn sphere(dim: usize, radius: f64) -> Self {
        Self { kind: FactorKind::RoundSphere, dim, scale: radius }
    }
    pub fn torus(dim: usize, side: f64) -> Self {
        Self { kind: FactorKind::FlatTorus, dim, scale: side }
    }

    pub fn volume(&self) -> f64 {
        let p = self.dim as i32;
        match self.kind {
            FactorKind::RoundSphere => unit_sphere_volume(self.dim) * self.scale.powi(p),
            FactorKind::FlatTorus => self.scale.powi(p),
        }
    }

    /// Ricci eigenvalue on the factor.
    pub fn ricci(&self) -> f64 {
        match self.kind {
            FactorKind::RoundSphere => (self.dim as f64 - 1.0) / (self.scale * self.scale),
            FactorKind::FlatTorus => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousMetric {
    factors: Vec<Factor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomCurvature {
    pub scalar: f64,
    /// Ricci eigenvalue per factor, in factor order.
    pub ricci: Vec<f64>,
    pub rm_norm: f64,
    pub max_rm: f64,
}

impl HomogeneousMetric {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidMetric("no factors".into()));
        }
        for f in &factors {
            if f.dim == 0 {
                return Err(Error::InvalidMetric("factor of dimension 0".into()));
            }
            if !f.scale.is_finite() {
                return Err(Error::NonFinite("factor scale"));
            }
            if f.scale <= 0.0 {
                return Err(Error::InvalidMetric(format!("factor scale {} not positive", f.scale)));
            }
            if f.kind == FactorKind::RoundSphere && f.dim < 2 {
                return Err(Error::InvalidMetric("round factors need dimension at least 2".into()));
            }
        }
        Ok(Self { factors })
    }

    pub(crate) fn from_factors_unchecked(factors: Vec<Factor>) -> Self {
        Self { factors }
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|f| f.dim).sum()
    }

    pub fn volume(&self) -> f64 {
        self.factors.iter().map(Factor::volume).product()
    }

    pub fn scalar_curvature(&self) -> f64 {
        self.factors.iter().map(|f| f.dim as f64 * f.ricci()).sum()
    }

    pub fn is_flat(&self) -> bool {
        self.factors.iter().all(|f| f.kind == FactorKind::FlatTorus)
    }

    /// Multiplies the metric by `lambda²`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self { factors: self.factors.iter().map(|f| Factor { scale: f.scale * lambda, ..*f }).collect() }
    }

    /// Interpolates the squared scales linearly, which is exact along the flow.
    pub fn lerp(&self, other: &Self, theta: f64) -> Self {
        let factors = self
            .factors
            .iter()
            .zip(&other.factors)
            .map(|(a, b)| {
                let s2 = a.scale * a.scale + theta * (b.scale * b.scale - a.scale * a.scale);
                Factor { scale: s2.max(0.0).sqrt(), ..*a }
            })
            .collect();
        Self { factors }
    }
}

pub fn curvature_hom(g: &HomogeneousMetric) -> HomCurvature {
    let ricci: Vec<f64> = g.factors.iter().map(Factor::ricci).collect();
    // a round p-sphere of radius a has |Rm|² = 2p(p-1)/a⁴
    let rm2: f64 = g
        .factors
        .iter()
        .map(|f| match f.kind {
            FactorKind::RoundSphere => {
                let p = f.dim as f64;
                2.0 * p * (p - 1.0) / f.scale.powi(4)
            }
            FactorKind::FlatTorus => 0.0,
        })
        .sum();
    HomCurvature { scalar: g.scalar_curvature(), ricci, rm_norm: rm2.sqrt(), max_rm: rm2.sqrt() }
}

/// Sup over factors of the scale difference; structures must agree.
pub fn metric_distance_hom(g1: &HomogeneousMetric, g2: &HomogeneousMetric) -> Result<f64> {
    if g1.factors.len() != g2.factors.len()
        || g1.factors.iter().zip(&g2.factors).any(|(a, b)| a.kind != b.kind || a.dim != b.dim)
    {
        return Err(Error::Shape("factor structures differ".into()));
    }
    Ok(g1.factors.iter().zip(&g2.factors).map(|(a, b)| (a.scale - b.scale).abs()).fold(0.0, f64::max))
}
