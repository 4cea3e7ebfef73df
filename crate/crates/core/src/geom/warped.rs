use serde::{Deserialize, Serialize};

use crate::{unit_sphere_volume, Error, Result};

/// Relative tolerance on the pole slope |dφ/ds| = 1.
pub const POLE_TOLERANCE: f64 = 1e-2;

/// Metric u(x)² dx² + φ(x)² g_{S^{n-1}} on the node grid x_i = i/N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpedMetric {
    n: usize,
    u: Vec<f64>,
    phi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureProfile {
    pub scalar: Vec<f64>,
    pub ric_rad: Vec<f64>,
    pub ric_sph: Vec<f64>,
    pub rm_norm: Vec<f64>,
    pub max_rm: f64,
}

impl CurvatureProfile {
    pub fn min_scalar(&self) -> f64 {
        self.scalar.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteNorm {
    pub order: u8,
    pub value: f64,
}

fn pole_slope(f1: f64, f2: f64, h: f64) -> f64 {
    // odd extension: f = c1 x + c3 x^3 near the pole
    (8.0 * f1 - f2) / (6.0 * h)
}

impl WarpedMetric {
    /// Builds and validates a metric from raw profiles. Pole values of φ must vanish
    /// and the pole slope must match u to `POLE_TOLERANCE`.
    pub fn new(n: usize, u: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let g = Self { n, u, phi };
        g.validate()?;
        Ok(g)
    }

    /// Skips the pole-slope check but still enforces positivity. Used by the flow,
    /// which re-imposes the pole condition itself.
    pub(crate) fn from_parts(n: usize, u: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let g = Self { n, u, phi };
        g.check_basic()?;
        Ok(g)
    }

    pub fn round_sphere(n: usize, radius: f64, grid_size: usize) -> Result<Self> {
        Self::from_arclength_profile(n, std::f64::consts::PI * radius, grid_size, |s| radius * (s / radius).sin())
    }

    /// Uniform-speed parametrization of total length `length` with warping φ(s).
    pub fn from_arclength_profile(
        n: usize,
        length: f64,
        grid_size: usize,
        phi_of_s: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(length > 0.0) || grid_size < 8 {
            return Err(Error::InvalidMetric(format!(
                "length {length} and grid size {grid_size} must be positive and at least 8"
            )));
        }
        let u = vec![length; grid_size + 1];
        let mut phi: Vec<f64> = (0..=grid_size).map(|i| phi_of_s(length * i as f64 / grid_size as f64)).collect();
        phi[0] = 0.0;
        phi[grid_size] = 0.0;
        Self::new(n, u, phi)
    }

    /// Round sphere of radius `a` with φ multiplied by 1 + ε sin²θ cosθ.
    pub fn perturbed_sphere(n: usize, a: f64, eps: f64, grid_size: usize) -> Result<Self> {
        Self::from_arclength_profile(n, std::f64::consts::PI * a, grid_size, |s| {
            let th = s / a;
            a * th.sin() * (1.0 + eps * th.sin().powi(2) * th.cos())
        })
    }

    /// Two round caps joined by a neck of relative radius `neck` in (0, 1).
    pub fn dumbbell(n: usize, a: f64, neck: f64, grid_size: usize) -> Result<Self> {
        if !(neck > 0.0 && neck < 1.0) {
            return Err(Error::InvalidMetric(format!("neck ratio {neck} outside (0,1)")));
        }
        Self::from_arclength_profile(n, std::f64::consts::PI * a, grid_size, |s| {
            let th = s / a;
            a * th.sin() * (neck + (1.0 - neck) * th.cos().powi(2))
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn grid_size(&self) -> usize {
        self.u.len() - 1
    }
    pub fn h(&self) -> f64 {
        1.0 / self.grid_size() as f64
    }
    pub fn u(&self) -> &[f64] {
        &self.u
    }
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }
    pub fn into_parts(self) -> (usize, Vec<f64>, Vec<f64>) {
        (self.n, self.u, self.phi)
    }

    fn check_basic(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidMetric(format!("dimension {} < 2", self.n)));
        }
        if self.u.len() != self.phi.len() {
            return Err(Error::Shape(format!("u has {} nodes, phi has {}", self.u.len(), self.phi.len())));
        }
        if self.u.len() < 9 {
            return Err(Error::InvalidMetric("grid size must be at least 8".into()));
        }
        if self.u.iter().chain(&self.phi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric profiles"));
        }
        if self.u.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidMetric("radial density must be positive".into()));
        }
        let last = self.phi.len() - 1;
        if let Some(i) = (1..last).find(|&i| self.phi[i] <= 0.0) {
            return Err(Error::Degenerate(format!("warping function non-positive at node {i}")));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        self.check_basic()?;
        let h = self.h();
        let last = self.phi.len() - 1;
        let scale = self.phi.iter().cloned().fold(0.0, f64::max);
        if self.phi[0].abs() > 1e-12 * scale || self.phi[last].abs() > 1e-12 * scale {
            return Err(Error::InvalidMetric("warping function must vanish at the poles".into()));
        }
        let left = pole_slope(self.phi[1], self.phi[2], h) / self.u[0];
        let right = pole_slope(self.phi[last - 1], self.phi[last - 2], h) / self.u[last];
        for (side, slope) in [("left", left), ("right", right)] {
            if (slope - 1.0).abs() > POLE_TOLERANCE {
                return Err(Error::InvalidMetric(format!(
                    "{side} pole slope |dphi/ds| = {slope:.6} violates smoothness"
                )));
            }
        }
        Ok(())
    }

    /// Constant-speed metric of total length `length` (u ≡ length).
    pub(crate) fn from_uniform(n: usize, length: f64, phi: Vec<f64>) -> Result<Self> {
        let mut g = Self::from_parts(n, vec![length; phi.len()], phi)?;
        g.enforce_poles();
        g.check_basic()?;
        Ok(g)
    }

    pub fn is_uniform(&self) -> bool {
        let l = self.u[0];
        self.u.iter().all(|&v| (v - l).abs() <= 1e-12 * l)
    }

    /// Same metric reparametrized to constant speed by cubic interpolation in arclength.
    pub fn uniformized(&self) -> Result<Self> {
        if self.is_uniform() {
            return Ok(self.clone());
        }
        let s = self.arclength();
        let m = s.len();
        let len = s[m - 1];
        let h = self.h();
        // invert the arclength map node by node
        let psi: Vec<f64> = (0..m)
            .map(|i| {
                let target = len * i as f64 / (m - 1) as f64;
                let k = s.partition_point(|&v| v <= target).clamp(1, m - 1);
                let t = (target - s[k - 1]) / (s[k] - s[k - 1]);
                ((k - 1) as f64 + t) * h
            })
            .collect();
        let g = self.pullback(&psi)?;
        Self::from_uniform(self.n, len, g.phi)
    }

    /// Sets φ to zero at the poles and moves the neighbouring nodes so the
    /// one-sided pole slope of φ equals u there.
    pub(crate) fn enforce_poles(&mut self) {
        let h = self.h();
        let last = self.phi.len() - 1;
        self.phi[0] = 0.0;
        self.phi[last] = 0.0;
        self.phi[1] = (6.0 * self.u[0] * h + self.phi[2]) / 8.0;
        self.phi[last - 1] = (6.0 * self.u[last] * h + self.phi[last - 2]) / 8.0;
    }

    /// Profiles with two ghost nodes per side: φ odd, u even across each pole.
    fn extended(&self) -> (Vec<f64>, Vec<f64>) {
        let last = self.phi.len() - 1;
        let mut u = Vec::with_capacity(last + 5);
        let mut phi = Vec::with_capacity(last + 5);
        for k in [2, 1] {
            u.push(self.u[k]);
            phi.push(-self.phi[k]);
        }
        u.extend_from_slice(&self.u);
        phi.extend_from_slice(&self.phi);
        for k in [1, 2] {
            u.push(self.u[last - k]);
            phi.push(-self.phi[last - k]);
        }
        (u, phi)
    }

    /// Arclength at each node by the trapezoid rule.
    pub fn arclength(&self) -> Vec<f64> {
        let h = self.h();
        let mut s = Vec::with_capacity(self.u.len());
        s.push(0.0);
        for w in self.u.windows(2) {
            let prev = *s.last().unwrap();
            s.push(prev + 0.5 * h * (w[0] + w[1]));
        }
        s
    }

    pub fn length(&self) -> f64 {
        *self.arclength().last().unwrap()
    }

    pub fn min_spacing(&self) -> f64 {
        let h = self.h();
        self.u.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).fold(f64::INFINITY, f64::min)
    }

    /// Per-node volume weights; they vanish at the poles. Gregory end corrections
    /// keep the rule fourth order when the density is odd across a pole.
    pub fn volume_weights(&self) -> Vec<f64> {
        const END: [f64; 3] = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
        let c = unit_sphere_volume(self.n - 1) * self.h();
        let last = self.u.len() - 1;
        self.u
            .iter()
            .zip(&self.phi)
            .enumerate()
            .map(|(i, (u, p))| {
                let k = i.min(last - i);
                let q = if k < 3 { END[k] } else { 1.0 };
                q * c * p.abs().powi(self.n as i32 - 1) * u
            })
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.volume_weights().iter().sum()
    }

    /// (total volume, per-node weights)
    pub fn volume_measure(&self) -> (f64, Vec<f64>) {
        let w = self.volume_weights();
        (w.iter().sum(), w)
    }

    /// Arclength derivatives (φ_s, φ_ss) and u_x at each node, fourth-order stencils.
    pub(crate) fn derivatives(&self) -> Derivs {
        let (u, phi) = self.extended();
        let h = self.h();
        let m = self.u.len();
        let mut d = Derivs { phi_s: vec![0.0; m], phi_ss: vec![0.0; m], u_x: vec![0.0; m] };
        for i in 0..m {
            let j = i + 2;
            let d1 = |f: &[f64]| (-f[j + 2] + 8.0 * f[j + 1] - 8.0 * f[j - 1] + f[j - 2]) / (12.0 * h);
            let d2 =
                |f: &[f64]| (-f[j + 2] + 16.0 * f[j + 1] - 30.0 * f[j] + 16.0 * f[j - 1] - f[j - 2]) / (12.0 * h * h);
            let (px, pxx, ux) = (d1(&phi), d2(&phi), d1(&u));
            let uu = u[j];
            d.phi_s[i] = px / uu;
            d.phi_ss[i] = (pxx * uu - px * ux) / (uu * uu * uu);
            d.u_x[i] = ux;
        }
        d
    }

    /// Sectional curvatures (radial plane, spherical plane) per node.
    pub(crate) fn sectional(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.derivatives();
        let m = self.u.len();
        let mut k_rad = vec![0.0; m];
        let mut k_sph = vec![0.0; m];
        for i in 1..m - 1 {
            let p = self.phi[i];
            k_rad[i] = -d.phi_ss[i] / p;
            k_sph[i] = (1.0 - d.phi_s[i] * d.phi_s[i]) / (p * p);
        }
        // curvature is even across a pole: extrapolate in x²
        for (pole, a, b, c) in [(0, 1, 2, 3), (m - 1, m - 2, m - 3, m - 4)] {
            k_rad[pole] = 1.5 * k_rad[a] - 0.6 * k_rad[b] + 0.1 * k_rad[c];
            k_sph[pole] = 1.5 * k_sph[a] - 0.6 * k_sph[b] + 0.1 * k_sph[c];
        }
        (k_rad, k_sph)
    }

    /// An interior node where φ has a local minimum, if any.
    pub fn neck(&self) -> Option<(usize, f64)> {
        let m = self.phi.len();
        (2..m - 2)
            .filter(|&i| self.phi[i] < self.phi[i - 1] && self.phi[i] <= self.phi[i + 1])
            .map(|i| (i, self.phi[i]))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Pulls back through a monotone reparametrization `x ↦ psi(x)` of [0,1],
    /// sampling with cubic interpolation.
    pub fn pullback(&self, psi: &[f64]) -> Result<Self> {
        let m = self.u.len();
        if psi.len() != m {
            return Err(Error::Shape(format!("map has {} nodes, metric {m}", psi.len())));
        }
        let h = self.h();
        let (u_ext, phi_ext) = self.extended();
        let dpsi: Vec<f64> = (0..m)
            .map(|i| {
                if i == 0 {
                    (-3.0 * psi[0] + 4.0 * psi[1] - psi[2]) / (2.0 * h)
                } else if i == m - 1 {
                    (3.0 * psi[m - 1] - 4.0 * psi[m - 2] + psi[m - 3]) / (2.0 * h)
                } else {
                    (psi[i + 1] - psi[i - 1]) / (2.0 * h)
                }
            })
            .collect();
        let mut u = Vec::with_capacity(m);
        let mut phi = Vec::with_capacity(m);
        for i in 0..m {
            let y = psi[i].clamp(0.0, 1.0);
            u.push(cubic_sample(&u_ext, y, h) * dpsi[i]);
            phi.push(cubic_sample(&phi_ext, y, h));
        }
        phi[0] = 0.0;
        phi[m - 1] = 0.0;
        Self::from_parts(self.n, u, phi)
    }

    /// Multiplies the metric by `lambda²`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            n: self.n,
            u: self.u.iter().map(|v| v * lambda).collect(),
            phi: self.phi.iter().map(|v| v * lambda).collect(),
        }
    }

    pub fn lerp(&self, other: &Self, theta: f64) -> Self {
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + theta * (y - x)).collect();
        Self { n: self.n, u: mix(&self.u, &other.u), phi: mix(&self.phi, &other.phi) }
    }
}

impl WarpedMetric {
    /// Arclength derivatives (f_s, f_ss) of a scalar that is even across both poles.
    pub(crate) fn scalar_derivs(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.u.len();
        let last = m - 1;
        let h = self.h();
        let mut fe = Vec::with_capacity(m + 4);
        fe.push(f[2]);
        fe.push(f[1]);
        fe.extend_from_slice(f);
        fe.push(f[last - 1]);
        fe.push(f[last - 2]);
        let (ue, _) = self.extended();
        let mut fs = vec![0.0; m];
        let mut fss = vec![0.0; m];
        for i in 0..m {
            let j = i + 2;
            let fx = (-fe[j + 2] + 8.0 * fe[j + 1] - 8.0 * fe[j - 1] + fe[j - 2]) / (12.0 * h);
            let fxx = (-fe[j + 2] + 16.0 * fe[j + 1] - 30.0 * fe[j] + 16.0 * fe[j - 1] - fe[j - 2]) / (12.0 * h * h);
            let ux = (-ue[j + 2] + 8.0 * ue[j + 1] - 8.0 * ue[j - 1] + ue[j - 2]) / (12.0 * h);
            let uu = ue[j];
            fs[i] = fx / uu;
            fss[i] = (fxx * uu - fx * ux) / (uu * uu * uu);
        }
        fs[0] = 0.0;
        fs[last] = 0.0;
        (fs, fss)
    }
}

impl WarpedMetric {
    /// d/dx of a profile that is odd across both poles.
    pub(crate) fn odd_dx(&self, v: &[f64]) -> Vec<f64> {
        let m = v.len();
        let last = m - 1;
        let h = self.h();
        let mut e = Vec::with_capacity(m + 4);
        e.push(2.0 * v[0] - v[2]);
        e.push(2.0 * v[0] - v[1]);
        e.extend_from_slice(v);
        e.push(2.0 * v[last] - v[last - 1]);
        e.push(2.0 * v[last] - v[last - 2]);
        (0..m)
            .map(|i| {
                let j = i + 2;
                (-e[j + 2] + 8.0 * e[j + 1] - 8.0 * e[j - 1] + e[j - 2]) / (12.0 * h)
            })
            .collect()
    }
}

pub(crate) struct Derivs {
    pub phi_s: Vec<f64>,
    pub phi_ss: Vec<f64>,
    pub u_x: Vec<f64>,
}

/// Catmull-Rom style cubic on a ghost-extended array (two ghosts per side).
fn cubic_sample(ext: &[f64], y: f64, h: f64) -> f64 {
    let m = ext.len() - 4;
    let pos = y / h;
    let k = (pos.floor() as usize).min(m - 2);
    let t = pos - k as f64;
    let j = k + 2;
    let (p0, p1, p2, p3) = (ext[j - 1], ext[j], ext[j + 1], ext[j + 2]);
    // Lagrange cubic through the four neighbours
    let l0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let l2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let l3 = (t + 1.0) * t * (t - 1.0) / 6.0;
    l0 * p0 + l1 * p1 + l2 * p2 + l3 * p3
}

pub fn curvature(g: &WarpedMetric) -> Result<CurvatureProfile> {
    g.check_basic()?;
    let n = g.n as f64;
    let (k_rad, k_sph) = g.sectional();
    let pairs_sph = (n - 1.0) * (n - 2.0) / 2.0;
    let m = k_rad.len();
    let mut out = CurvatureProfile {
        scalar: Vec::with_capacity(m),
        ric_rad: Vec::with_capacity(m),
        ric_sph: Vec::with_capacity(m),
        rm_norm: Vec::with_capacity(m),
        max_rm: 0.0,
    };
    for (kr, ks) in k_rad.into_iter().zip(k_sph) {
        let rr = (n - 1.0) * kr;
        let rs = kr + (n - 2.0) * ks;
        let rm = (4.0 * ((n - 1.0) * kr * kr + pairs_sph * ks * ks)).sqrt();
        out.scalar.push(rr + (n - 1.0) * rs);
        out.ric_rad.push(rr);
        out.ric_sph.push(rs);
        out.rm_norm.push(rm);
        out.max_rm = out.max_rm.max(rm);
    }
    if !out.max_rm.is_finite() || out.scalar.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("curvature"));
    }
    Ok(out)
}

/// Sup of profile differences and their first and second divided differences up to `order`.
pub fn metric_distance(g1: &WarpedMetric, g2: &WarpedMetric, order: u8) -> Result<DiscreteNorm> {
    if g1.n != g2.n || g1.u.len() != g2.u.len() {
        return Err(Error::Shape(format!(
            "metrics differ in structure: (n={}, N={}) vs (n={}, N={})",
            g1.n,
            g1.grid_size(),
            g2.n,
            g2.grid_size()
        )));
    }
    if order > 2 {
        return Err(Error::Range(format!("order {order} > 2")));
    }
    let h = g2.h();
    let mut value: f64 = 0.0;
    for (a, b) in [(&g1.u, &g2.u), (&g1.phi, &g2.phi)] {
        let d: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
        value = value.max(d.iter().fold(0.0, |m, v| m.max(v.abs())));
        if order >= 1 {
            for w in d.windows(2) {
                value = value.max(((w[1] - w[0]) / h).abs());
            }
        }
        if order >= 2 {
            for w in d.windows(3) {
                value = value.max(((w[2] - 2.0 * w[1] + w[0]) / (h * h)).abs());
            }
        }
    }
    Ok(DiscreteNorm { order, value })
}
