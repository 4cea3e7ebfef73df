use serde::{Deserialize, Serialize};

use crate::entropy::{mu_hom_restricted, nu_functional};
use crate::geom::curvature;
use crate::{unit_sphere_volume, Error, HomogeneousMetric, Result, WarpedMetric};

/// Constants in (∫|u|^{2n/(n−2)})^{(n−2)/n} ≤ A∫|∇u|² + B∫u².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevConstants {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuFloorReport {
    pub n: usize,
    pub supplied: SobolevConstants,
    /// A after enlarging it so that 4B/(A c₀) ≤ 1.
    pub a: f64,
    pub enlarged: bool,
    pub c0: f64,
    /// The floor is −`constant`.
    pub constant: f64,
    pub values: Vec<(f64, f64)>,
    /// min over τ of μ(g, τ) + C.
    pub min_margin: f64,
    pub pass: bool,
}

/// Sharp leading constant 4/(n(n−2)) · |S^n|^{−2/n}.
pub fn sharp_sobolev_a(n: usize) -> f64 {
    let nf = n as f64;
    4.0 / (nf * (nf - 2.0)) * unit_sphere_volume(n).powf(-2.0 / nf)
}

/// C(n, A) = (n/2) ln(nAπ/(2e)) + n, valid once 4B/(A c₀) ≤ 1.
pub fn log_sobolev_constant(n: usize, a: f64) -> f64 {
    let nf = n as f64;
    0.5 * nf * (nf * a * std::f64::consts::PI / (2.0 * std::f64::consts::E)).ln() + nf
}

/// Metrics the floor check can run on.
pub trait NuFloorTarget {
    fn dimension(&self) -> usize;
    fn min_scalar(&self) -> Result<f64>;
    /// μ(g, τ) on each grid point.
    fn mu_values(&self, taus: &[f64]) -> Result<Vec<(f64, f64)>>;
    /// B for the sharp A, from the largest Sobolev defect over test functions.
    fn estimate_b(&self, a: f64) -> Result<f64>;
}

impl NuFloorTarget for WarpedMetric {
    fn dimension(&self) -> usize {
        self.dim()
    }
    fn min_scalar(&self) -> Result<f64> {
        Ok(curvature(self)?.min_scalar())
    }
    fn mu_values(&self, taus: &[f64]) -> Result<Vec<(f64, f64)>> {
        let r = nu_functional(self, taus, 0.0)?;
        Ok(r.values.into_iter().map(|(t, m)| (t, m.unwrap())).collect())
    }
    fn estimate_b(&self, a: f64) -> Result<f64> {
        let n = self.dim() as f64;
        let p = 2.0 * n / (n - 2.0);
        let w = self.volume_weights();
        let s = self.arclength();
        let len = *s.last().unwrap();
        let defect = |u: &[f64]| {
            let lp = w.iter().zip(u).map(|(w, u)| w * u.abs().powf(p)).sum::<f64>().powf(2.0 / p);
            let l2: f64 = w.iter().zip(u).map(|(w, u)| w * u * u).sum();
            let grad: f64 = (0..u.len() - 1)
                .map(|i| 0.5 * (w[i] + w[i + 1]) * ((u[i + 1] - u[i]) / (s[i + 1] - s[i])).powi(2))
                .sum();
            (lp - a * grad) / l2
        };
        let mut best = defect(&vec![1.0; s.len()]);
        // bubbles (ρ² + d²)^{−(n−2)/2} around either pole, resolved by the grid
        let rho_min = 4.0 * self.min_spacing();
        let count = 16;
        let ratio = (2.0 * len / rho_min).powf(1.0 / (count - 1) as f64);
        for k in 0..count {
            let rho = rho_min * ratio.powi(k);
            for from_start in [true, false] {
                let u: Vec<f64> = s
                    .iter()
                    .map(|x| {
                        let d = if from_start { *x } else { len - x };
                        (rho * rho + d * d).powf(-0.5 * (n - 2.0))
                    })
                    .collect();
                best = best.max(defect(&u));
            }
        }
        Ok(best)
    }
}

impl NuFloorTarget for HomogeneousMetric {
    fn dimension(&self) -> usize {
        self.dim()
    }
    fn min_scalar(&self) -> Result<f64> {
        Ok(self.scalar_curvature())
    }
    /// Closed form over constant potentials, an upper estimate of μ.
    fn mu_values(&self, taus: &[f64]) -> Result<Vec<(f64, f64)>> {
        Ok(taus.iter().map(|&t| (t, mu_hom_restricted(self, t))).collect())
    }
    /// The constant function only: B = Vol^{−2/n}.
    fn estimate_b(&self, _a: f64) -> Result<f64> {
        Ok(self.volume().powf(-2.0 / self.dim() as f64))
    }
}

/// Sharp A with B estimated on `g`.
pub fn estimate_sobolev<G: NuFloorTarget>(g: &G) -> Result<SobolevConstants> {
    let n = g.dimension();
    if n <= 2 {
        return Err(Error::Precondition(format!("Sobolev exponent needs dimension above 2, got {n}")));
    }
    let a = sharp_sobolev_a(n);
    Ok(SobolevConstants { a, b: g.estimate_b(a)? })
}

/// Checks μ(g, τ) ≥ −C(n, A, B, c₀) over `taus`, with (A, B) supplied or estimated.
pub fn sobolev_nu_bound<G: NuFloorTarget>(
    g: &G,
    taus: &[f64],
    constants: Option<SobolevConstants>,
) -> Result<NuFloorReport> {
    let n = g.dimension();
    if n <= 2 {
        return Err(Error::Precondition(format!("Sobolev exponent needs dimension above 2, got {n}")));
    }
    let c0 = g.min_scalar()?;
    if !(c0 > 0.0) {
        return Err(Error::Precondition(format!("scalar curvature must be positive, min R = {c0:e}")));
    }
    let supplied = match constants {
        Some(c) => c,
        None => estimate_sobolev(g)?,
    };
    if !(supplied.a > 0.0 && supplied.b >= 0.0) {
        return Err(Error::Precondition(format!("Sobolev constants {supplied:?} out of range")));
    }
    let needed = 4.0 * supplied.b / c0;
    let enlarged = needed > supplied.a;
    let a = supplied.a.max(needed);
    let constant = log_sobolev_constant(n, a);
    let values = g.mu_values(taus)?;
    let min_margin = values.iter().map(|(_, m)| m + constant).fold(f64::INFINITY, f64::min);
    Ok(NuFloorReport { n, supplied, a, enlarged, c0, constant, values, min_margin, pass: min_margin >= -1e-9 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::geometric_grid;
    use crate::Factor;
    use approx::assert_relative_eq;

    #[test]
    fn constant_grows_with_a() {
        let c: Vec<f64> = (0..6).map(|k| log_sobolev_constant(3, 0.2 * 2f64.powi(k))).collect();
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn torus_is_rejected() {
        let t = HomogeneousMetric::new(vec![Factor::torus(3, 1.0)]).unwrap();
        assert!(matches!(sobolev_nu_bound(&t, &[1.0], None), Err(Error::Precondition(_))));
    }

    #[test]
    fn sphere_estimate_recovers_the_volume_term() {
        let g = WarpedMetric::round_sphere(3, 2.0, 128).unwrap();
        let c = estimate_sobolev(&g).unwrap();
        let exact = g.volume().powf(-2.0 / 3.0);
        assert_relative_eq!(c.b, exact, max_relative = 2e-2);
    }

    #[test]
    fn homogeneous_sphere_floor() {
        let g = HomogeneousMetric::new(vec![Factor::sphere(3, 2.0)]).unwrap();
        let r = sobolev_nu_bound(&g, &geometric_grid(1e-2, 1e2, 41), None).unwrap();
        assert!(r.pass && !r.enlarged, "{r:?}");
    }

    #[test]
    fn enlarging_a_when_b_dominates() {
        let g = HomogeneousMetric::new(vec![Factor::sphere(3, 2.0)]).unwrap();
        let r = sobolev_nu_bound(&g, &[1.0], Some(SobolevConstants { a: 0.01, b: 1.0 })).unwrap();
        assert!(r.enlarged);
        assert_relative_eq!(4.0 * r.supplied.b / (r.a * r.c0), 1.0, max_relative = 1e-12);
    }
}
