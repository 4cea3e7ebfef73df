//! Constant-speed gauge: the flows are integrated for (L, φ) with u ≡ L on the
//! node grid, adding the tangential motion that keeps nodes equally spaced in arclength.

use crate::geom::WarpedMetric;

pub(crate) struct GaugedRate {
    pub length: f64,
    pub phi: Vec<f64>,
    /// Velocity of material points in the grid coordinate (forward time).
    pub velocity: Vec<f64>,
}

/// Cumulative integral of an even-across-the-poles nodal function, fourth order.
fn cumulative_even(f: &[f64], h: f64) -> Vec<f64> {
    let m = f.len();
    let last = m - 1;
    let at = |i: isize| -> f64 {
        // even reflection across both ends
        let j = if i < 0 {
            -i
        } else if i as usize > last {
            2 * last as isize - i
        } else {
            i
        };
        f[j as usize]
    };
    let mut out = vec![0.0; m];
    let mut trap = 0.0;
    for k in 1..m {
        trap += 0.5 * h * (f[k - 1] + f[k]);
        let i = k as isize;
        let df = (-at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2)) / (12.0 * h);
        // f' vanishes at the first pole by symmetry
        out[k] = trap - h * h / 12.0 * df;
    }
    out
}

/// Converts material rates (u_t, φ_t) at a constant-speed metric into gauge rates.
pub(crate) fn to_uniform_gauge(g: &WarpedMetric, du: &[f64], dphi: &[f64]) -> GaugedRate {
    let u = g.u();
    let l = u[0];
    let h = g.h();
    let m = u.len();
    let rate: Vec<f64> = du.iter().zip(u).map(|(a, b)| a / b).collect();
    // growth of arclength from the first pole, per unit grid coordinate
    let grow = cumulative_even(&rate, h);
    let total = grow[m - 1];
    let mut velocity = vec![0.0; m];
    for (k, v) in velocity.iter_mut().enumerate().take(m - 1).skip(1) {
        let y = k as f64 * h;
        *v = grow[k] - y * total;
    }
    let d = g.derivatives();
    let phi = (0..m).map(|k| dphi[k] - l * d.phi_s[k] * velocity[k]).collect();
    GaugedRate { length: total * l, phi, velocity }
}

/// Applies a weighted sum of gauge rates to a constant-speed base metric.
pub(crate) fn advance_uniform(
    base: &WarpedMetric,
    rates: &[&GaugedRate],
    weights: &[f64],
    dt: f64,
) -> crate::Result<WarpedMetric> {
    let mut l = base.u()[0];
    let mut phi = base.phi().to_vec();
    for (r, w) in rates.iter().zip(weights) {
        l += dt * w * r.length;
        for (p, d) in phi.iter_mut().zip(&r.phi) {
            *p += dt * w * d;
        }
    }
    WarpedMetric::from_uniform(base.dim(), l, phi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_integral_is_accurate() {
        let m = 65;
        let h = 1.0 / 64.0;
        let f: Vec<f64> = (0..m).map(|i| (std::f64::consts::PI * i as f64 * h).cos().powi(2)).collect();
        let c = cumulative_even(&f, h);
        for (i, v) in c.iter().enumerate() {
            let x = i as f64 * h;
            let exact = 0.5 * x + (2.0 * std::f64::consts::PI * x).sin() / (4.0 * std::f64::consts::PI);
            assert!((v - exact).abs() < 1e-7, "{i}: {v} vs {exact}");
        }
    }
}
