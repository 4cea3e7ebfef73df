use crate::geom::curvature;
use crate::{HomogeneousMetric, Result, WarpedMetric};

/// Scalar curvature as a function of the volume fraction swept from one end.
/// Both are invariant under reparametrizations fixing that end.
pub trait ScalarProfile {
    /// (fractions increasing from 0 to 1, scalar curvature at each fraction)
    fn scalar_profile(&self) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl ScalarProfile for WarpedMetric {
    fn scalar_profile(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let r = curvature(self)?.scalar;
        let n = self.dim() as i32;
        let dens: Vec<f64> = self.u().iter().zip(self.phi()).map(|(u, p)| u * p.abs().powi(n - 1)).collect();
        let mut f = Vec::with_capacity(dens.len());
        f.push(0.0);
        for w in dens.windows(2) {
            let prev = *f.last().unwrap();
            f.push(prev + 0.5 * (w[0] + w[1]));
        }
        let total = *f.last().unwrap();
        f.iter_mut().for_each(|v| *v /= total);
        Ok((f, r))
    }
}

impl ScalarProfile for HomogeneousMetric {
    fn scalar_profile(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let r = self.scalar_curvature();
        Ok((vec![0.0, 1.0], vec![r, r]))
    }
}

fn sample(f: &[f64], r: &[f64], x: f64) -> f64 {
    let j = f.partition_point(|v| *v < x).clamp(1, f.len() - 1);
    let (a, b) = (f[j - 1], f[j]);
    if b <= a {
        return r[j];
    }
    r[j - 1] + (r[j] - r[j - 1]) * (x - a) / (b - a)
}

const PROFILE_SAMPLES: usize = 400;

/// Sup distance, sampled at interior volume fractions, between scalar-curvature profiles over volume fraction, minimized
/// over the two orientations of the second metric.
pub fn gauge_compare<A: ScalarProfile, B: ScalarProfile>(g1: &A, g2: &B) -> Result<f64> {
    let (f1, r1) = g1.scalar_profile()?;
    let (f2, r2) = g2.scalar_profile()?;
    let f2_rev: Vec<f64> = f2.iter().rev().map(|v| 1.0 - v).collect();
    let r2_rev: Vec<f64> = r2.iter().rev().copied().collect();
    let sup = |fb: &[f64], rb: &[f64]| {
        // cell midpoints in fraction; the poles themselves carry no volume
        (0..PROFILE_SAMPLES)
            .map(|k| {
                let x = (k as f64 + 0.5) / PROFILE_SAMPLES as f64;
                (sample(&f1, &r1, x) - sample(fb, rb, x)).abs()
            })
            .fold(0.0, f64::max)
    };
    Ok(sup(&f2, &r2).min(sup(&f2_rev, &r2_rev)))
}
