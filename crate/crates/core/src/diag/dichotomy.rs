use serde::{Deserialize, Serialize};

use super::{products_bounded, sin_power_integral};
use crate::entropy::{mu_hom_restricted, mu_minimize, shrinker_residual, shrinker_residual_hom};
use crate::flow::{FlowTrajectory, MetricState};
use crate::geom::{curvature, curvature_hom, metric_distance, metric_distance_hom, FactorKind};
use crate::{unit_sphere_volume, Error, HomogeneousMetric, RescalingSequence, Result, WarpedMetric};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DichotomyKind {
    Shrinker,
    RicciFlat,
    Undetermined,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyTolerances {
    pub residual: f64,
    pub ricci: f64,
    /// Relative distance between the last two volume-normalized rescaled states.
    pub convergence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyVerdict {
    pub kind: DichotomyKind,
    pub qt_products: Vec<f64>,
    pub products_bounded: bool,
    /// Shrinker residual of the last rescaled state at τ = Q|t|.
    pub residual: f64,
    /// sup |Ric| of the last rescaled state.
    pub ric_at_limit: f64,
    /// min over the sequence of μ(Q g, Q|t|), a lower proxy for the Nash entropy.
    pub nash_floor: f64,
    /// The same minimum over the first half of the sequence; a stable floor has
    /// both values close.
    pub nash_floor_half: f64,
    /// min over probes of Vol(B(r))/rⁿ at radii with sup R ≤ r⁻².
    pub strong_noncollapse_margin: f64,
    /// max diam(g_t)/√|t| and min Vol(g_t)/|t|^{n/2}.
    pub diam_ratio: f64,
    pub volume_ratio: f64,
    pub convergence_gap: f64,
    pub exclusivity_ok: bool,
}

/// Geometric quantities the dichotomy classifier needs from a metric.
pub trait DichotomyState: MetricState {
    fn dimension(&self) -> usize;
    fn default_tolerances() -> DichotomyTolerances;
    fn residual_at(&self, tau: f64) -> Result<f64>;
    fn mu_at(&self, tau: f64) -> Result<f64>;
    fn ricci_sup(&self) -> Result<f64>;
    fn scalar_sup(&self) -> Result<f64>;
    fn diameter(&self) -> f64;
    fn total_volume(&self) -> f64;
    /// A lower estimate of the volume of some ball of radius r.
    fn ball_volume(&self, r: f64) -> f64;
    /// Relative distance between two states of the same structure.
    fn relative_distance(&self, other: &Self) -> Result<f64>;
}

fn euclidean_ball(d: usize, r: f64) -> f64 {
    let k = d as f64 / 2.0;
    std::f64::consts::PI.powf(k) / statrs::function::gamma::gamma(k + 1.0) * r.powi(d as i32)
}

impl DichotomyState for HomogeneousMetric {
    fn dimension(&self) -> usize {
        self.dim()
    }
    fn default_tolerances() -> DichotomyTolerances {
        DichotomyTolerances { residual: 1e-9, ricci: 1e-3, convergence: 1e-6 }
    }
    fn residual_at(&self, tau: f64) -> Result<f64> {
        Ok(shrinker_residual_hom(self, tau))
    }
    fn mu_at(&self, tau: f64) -> Result<f64> {
        Ok(mu_hom_restricted(self, tau))
    }
    fn ricci_sup(&self) -> Result<f64> {
        Ok(curvature_hom(self).ricci.iter().fold(0.0, |m, v| m.max(v.abs())))
    }
    fn scalar_sup(&self) -> Result<f64> {
        Ok(self.scalar_curvature())
    }
    fn diameter(&self) -> f64 {
        self.factors()
            .iter()
            .map(|f| match f.kind {
                FactorKind::RoundSphere => (std::f64::consts::PI * f.scale).powi(2),
                FactorKind::FlatTorus => f.dim as f64 * (0.5 * f.scale).powi(2),
            })
            .sum::<f64>()
            .sqrt()
    }
    fn total_volume(&self) -> f64 {
        self.volume()
    }
    /// Product of factor balls of radius r/√k, which sits inside the r-ball.
    fn ball_volume(&self, r: f64) -> f64 {
        let rho = r / (self.factors().len() as f64).sqrt();
        self.factors()
            .iter()
            .map(|f| match f.kind {
                FactorKind::RoundSphere => {
                    let theta = (rho / f.scale).min(std::f64::consts::PI);
                    unit_sphere_volume(f.dim - 1) * f.scale.powi(f.dim as i32) * sin_power_integral(f.dim - 1, theta)
                }
                FactorKind::FlatTorus => euclidean_ball(f.dim, rho.min(0.5 * f.scale)),
            })
            .product()
    }
    fn relative_distance(&self, other: &Self) -> Result<f64> {
        let scale = self.factors().iter().map(|f| f.scale).fold(0.0, f64::max);
        Ok(metric_distance_hom(self, other)? / scale)
    }
}

impl DichotomyState for WarpedMetric {
    fn dimension(&self) -> usize {
        self.dim()
    }
    fn default_tolerances() -> DichotomyTolerances {
        DichotomyTolerances { residual: 1e-3, ricci: 1e-3, convergence: 1e-2 }
    }
    fn residual_at(&self, tau: f64) -> Result<f64> {
        let min = mu_minimize(self, tau)?;
        Ok(shrinker_residual(self, &min.potential, tau)?.sup)
    }
    fn mu_at(&self, tau: f64) -> Result<f64> {
        Ok(mu_minimize(self, tau)?.mu)
    }
    fn ricci_sup(&self) -> Result<f64> {
        let c = curvature(self)?;
        Ok(c.ric_rad.iter().chain(&c.ric_sph).fold(0.0, |m, v| m.max(v.abs())))
    }
    fn scalar_sup(&self) -> Result<f64> {
        Ok(curvature(self)?.scalar.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }
    fn diameter(&self) -> f64 {
        self.length()
    }
    fn total_volume(&self) -> f64 {
        self.volume()
    }
    /// Cap around the first pole.
    fn ball_volume(&self, r: f64) -> f64 {
        super::noncollapse::cap_volume(self, true, r)
    }
    fn relative_distance(&self, other: &Self) -> Result<f64> {
        let scale = self.u().iter().cloned().fold(0.0, f64::max);
        Ok(metric_distance(self, other, 0)?.value / scale)
    }
}

fn normalized<M: DichotomyState>(g: &M) -> M {
    g.times(g.total_volume().powf(-2.0 / g.dimension() as f64))
}

fn strong_noncollapse<M: DichotomyState>(g: &M) -> Result<f64> {
    let n = g.dimension() as i32;
    let sup_r = g.scalar_sup()?;
    let mut r = g.diameter();
    if sup_r > 0.0 {
        r = r.min(sup_r.powf(-0.5));
    }
    let mut margin = f64::INFINITY;
    for _ in 0..5 {
        margin = margin.min(g.ball_volume(r) / r.powi(n));
        r *= 0.5;
    }
    Ok(margin)
}

/// Classifies the limit of the rescaled states Q_i g_{t_i}. Times in `seq` are
/// measured from the singular time (or are the ancient times themselves).
pub fn classify_dichotomy<M: DichotomyState>(
    traj: &FlowTrajectory<M>,
    seq: &RescalingSequence,
) -> Result<DichotomyVerdict> {
    classify_dichotomy_with(traj, seq, M::default_tolerances(), 0.0)
}

/// As `classify_dichotomy`, with explicit tolerances and the time offset
/// `t_sing` added to the sequence times before sampling the trajectory.
pub fn classify_dichotomy_with<M: DichotomyState>(
    traj: &FlowTrajectory<M>,
    seq: &RescalingSequence,
    tol: DichotomyTolerances,
    t_sing: f64,
) -> Result<DichotomyVerdict> {
    let k = seq.t.len();
    if k < 3 {
        return Err(Error::Precondition("need at least three rescaling times".into()));
    }
    let rescaled =
        seq.t.iter().zip(&seq.q).map(|(t, q)| Ok(traj.at(t + t_sing)?.times(*q))).collect::<Result<Vec<M>>>()?;
    let gap = normalized(&rescaled[k - 2]).relative_distance(&normalized(&rescaled[k - 1]))?;
    if !(gap <= tol.convergence) {
        return Err(Error::Validation(format!(
            "rescaled sequence does not converge: last relative gap {gap:e} > {:e}",
            tol.convergence
        )));
    }
    let (_, bounded) = products_bounded(&seq.t, &seq.products);
    let limit = &rescaled[k - 1];
    let residual = limit.residual_at(seq.products[k - 1])?;
    let ric = limit.ricci_sup()?;
    let mut mus = Vec::with_capacity(k);
    for (g, p) in rescaled.iter().zip(&seq.products) {
        mus.push(g.mu_at(*p)?);
    }
    let nash_floor = mus.iter().cloned().fold(f64::INFINITY, f64::min);
    let nash_floor_half = mus[..k.div_ceil(2)].iter().cloned().fold(f64::INFINITY, f64::min);
    let n = limit.dimension() as f64;
    let mut diam_ratio: f64 = 0.0;
    let mut volume_ratio = f64::INFINITY;
    for (g, p) in rescaled.iter().zip(&seq.products) {
        diam_ratio = diam_ratio.max(g.diameter() / p.sqrt());
        volume_ratio = volume_ratio.min(g.total_volume() / p.powf(n / 2.0));
    }
    let shrinker_met = residual <= tol.residual;
    let flat_met = !bounded && ric <= tol.ricci;
    let kind = if bounded && shrinker_met {
        DichotomyKind::Shrinker
    } else if flat_met {
        DichotomyKind::RicciFlat
    } else {
        DichotomyKind::Undetermined
    };
    Ok(DichotomyVerdict {
        kind,
        qt_products: seq.products.clone(),
        products_bounded: bounded,
        residual,
        ric_at_limit: ric,
        nash_floor,
        nash_floor_half,
        strong_noncollapse_margin: strong_noncollapse(limit)?,
        diam_ratio,
        volume_ratio,
        convergence_gap: gap,
        exclusivity_ok: !(shrinker_met && flat_met),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_hom, Direction};
    use crate::Factor;

    fn product_shrinker() -> FlowTrajectory<HomogeneousMetric> {
        // each S² factor has a² = 2|t|
        let g0 =
            HomogeneousMetric::new(vec![Factor::sphere(2, 2f64.sqrt() * 4.0), Factor::sphere(2, 2f64.sqrt() * 4.0)])
                .unwrap();
        let times: Vec<f64> = (0..=40).map(|k| -16.0 * 0.8f64.powi(k)).collect();
        run_hom(&g0, -16.0, &times).unwrap()
    }

    #[test]
    fn product_shrinker_is_a_shrinker() {
        let traj = product_shrinker();
        let t: Vec<f64> = traj.times[10..].to_vec();
        let q: Vec<f64> = t.iter().map(|t| 1.0 / t.abs()).collect();
        let seq = RescalingSequence::new(t, q).unwrap();
        let v = classify_dichotomy(&traj, &seq).unwrap();
        assert_eq!(v.kind, DichotomyKind::Shrinker);
        assert!(v.residual <= 1e-9, "{}", v.residual);
        assert!(v.qt_products.iter().all(|p| (p - 1.0).abs() < 1e-12));
        assert!(v.exclusivity_ok);
        assert!((v.nash_floor - v.nash_floor_half).abs() < 1e-9);
        assert!(v.strong_noncollapse_margin > 0.0);
    }

    #[test]
    fn torus_with_growing_products_is_ricci_flat() {
        let g = HomogeneousMetric::new(vec![Factor::torus(3, 1.0)]).unwrap();
        let times: Vec<f64> = (0..=30).map(|k| -(10f64).powf(6.0 - 0.2 * k as f64)).collect();
        let traj = FlowTrajectory::new(times.clone(), vec![g; times.len()], Direction::Forward).unwrap();
        let t = times[..20].to_vec();
        let q: Vec<f64> = t.iter().map(|t| t.abs().powf(-0.5)).collect();
        let v = classify_dichotomy(&traj, &RescalingSequence::new(t, q).unwrap()).unwrap();
        assert_eq!(v.kind, DichotomyKind::RicciFlat);
        assert!(!v.products_bounded && v.exclusivity_ok);
        assert_eq!(v.ric_at_limit, 0.0);
    }

    #[test]
    fn drifting_shapes_are_rejected() {
        let traj = product_shrinker();
        let t: Vec<f64> = traj.times[10..].to_vec();
        let q: Vec<f64> = t.iter().enumerate().map(|(i, t)| (1.0 + 0.1 * i as f64) / t.abs()).collect();
        // a uniform rescale of the product is still the same normalized shape
        assert!(classify_dichotomy(&traj, &RescalingSequence::new(t.clone(), q).unwrap()).is_ok());
        let g0 = HomogeneousMetric::new(vec![Factor::sphere(2, 6.0), Factor::sphere(2, 7.0)]).unwrap();
        let lop = run_hom(&g0, -16.0, &traj.times[..10]).unwrap();
        let t = lop.times[3..].to_vec();
        let q: Vec<f64> = t.iter().map(|t| 1.0 / t.abs()).collect();
        assert!(classify_dichotomy(&lop, &RescalingSequence::new(t, q).unwrap()).is_err());
    }
}
