use serde::{Deserialize, Serialize};

use crate::entropy::nash_entropy;
use crate::flow::FlowTrajectory;
use crate::geom::curvature;
use crate::heat::{h_n, hn_center};
use crate::{ConjugateHeatFlow, Result, WarpedMetric};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoncollapseProbe {
    pub slice: usize,
    pub time: f64,
    /// r with r² = τ at the probe slice.
    pub r: f64,
    pub nash: f64,
    pub r_min: f64,
    /// exp(−2√(n − 2R_min r²)); the dimensional constant is taken as 1.
    pub c_factor: f64,
    /// √(2H_n)·r
    pub radius: f64,
    pub center_coord: f64,
    /// Volume of the cap around the nearer pole of radius `radius` minus the
    /// centre's distance to that pole; it lies inside the ball.
    pub volume: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

pub const NONCOLLAPSE_TOL: f64 = 1e-6;

pub fn noncollapse_factor(n: usize, r_min: f64, r: f64) -> f64 {
    (-2.0 * (n as f64 - 2.0 * r_min * r * r).max(0.0).sqrt()).exp()
}

/// Volume within arclength `radius` of one pole, interpolating the cumulative
/// volume linearly between nodes.
pub(crate) fn cap_volume(g: &WarpedMetric, from_start: bool, radius: f64) -> f64 {
    let mut s = g.arclength();
    let mut w = g.volume_weights();
    if !from_start {
        let len = *s.last().unwrap();
        s = s.iter().rev().map(|v| len - v).collect();
        w.reverse();
    }
    let mut acc = 0.0;
    for i in 0..s.len() - 1 {
        let edge = 0.5 * (w[i] + w[i + 1]);
        if radius < s[i + 1] {
            return acc + edge * ((radius - s[i]) / (s[i + 1] - s[i])).max(0.0);
        }
        acc += edge;
    }
    acc
}

/// Checks Vol(B(z, √(2H_n)r)) ≥ c·exp(𝒩(r²))·rⁿ at the given kernel slices,
/// where z is an H_n-centre of the kernel slice at time t₀ − r².
pub fn noncollapse_check(
    traj: &FlowTrajectory<WarpedMetric>,
    kernel: &ConjugateHeatFlow,
    probes: &[usize],
) -> Result<Vec<NoncollapseProbe>> {
    let n = kernel.dim();
    let mut out = Vec::with_capacity(probes.len());
    for &k in probes {
        let time = kernel.times[k];
        let tau = kernel.tau(k);
        let r = tau.sqrt();
        let g = traj.at(time)?;
        let r_min = curvature(&g)?.min_scalar();
        let nash = nash_entropy(kernel, k)?;
        let coords = &kernel.coords[k];
        let c = hn_center(&kernel.measure(k), coords, n, kernel.virtual_base, time);
        let len = *coords.last().unwrap();
        let radius = (2.0 * h_n(n)).sqrt() * r;
        let from_start = c.center_coord <= len - c.center_coord;
        let offset = c.center_coord.min(len - c.center_coord);
        let volume = cap_volume(&g, from_start, radius - offset);
        let c_factor = noncollapse_factor(n, r_min, r);
        let bound = c_factor * nash.exp() * r.powi(n as i32);
        let margin = volume / bound;
        out.push(NoncollapseProbe {
            slice: k,
            time,
            r,
            nash,
            r_min,
            c_factor,
            radius,
            center_coord: c.center_coord,
            volume,
            bound,
            margin,
            pass: margin >= 1.0 - NONCOLLAPSE_TOL,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_ricci, RicciConfig};
    use crate::heat::{kernel_from_point, KernelOptions};
    use approx::assert_relative_eq;

    #[test]
    fn flat_factor() {
        assert_relative_eq!(noncollapse_factor(3, 0.0, 0.7), (-2.0 * 3f64.sqrt()).exp(), max_relative = 1e-15);
        assert_relative_eq!(noncollapse_factor(3, 10.0, 1.0), 1.0);
    }

    fn probes(radius: f64) -> Vec<NoncollapseProbe> {
        // the sphere of radius a has a² = 4(T − t) with T = a²/4
        let g = WarpedMetric::round_sphere(3, radius, 64).unwrap();
        let big_t = radius * radius / 4.0;
        let traj = run_ricci(&g, &RicciConfig::adaptive(0.0, 0.6 * big_t, 1e-3 * big_t)).unwrap().traj;
        let t0 = 0.6 * big_t;
        let kernel = kernel_from_point(&traj, 0, t0, &KernelOptions::default()).unwrap();
        // slice nearest r² = |t0 − T|/2
        let target = 0.5 * (big_t - t0);
        let k = (0..kernel.len())
            .min_by(|a, b| (kernel.tau(*a) - target).abs().total_cmp(&(kernel.tau(*b) - target).abs()))
            .unwrap();
        noncollapse_check(&traj, &kernel, &[k]).unwrap()
    }

    #[test]
    fn sphere_margin_is_scale_invariant() {
        let a = probes(2.0);
        let b = probes(6.0);
        assert!(a[0].pass && b[0].pass);
        assert!((a[0].margin / b[0].margin - 1.0).abs() < 1e-2, "{} vs {}", a[0].margin, b[0].margin);
    }
}
