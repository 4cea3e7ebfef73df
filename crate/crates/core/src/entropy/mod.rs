//! Entropy functionals in the substitution w² = (4πτ)^{-n/2} e^{-f}.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::geom::{curvature, HomogeneousMetric, WarpedMetric};
use crate::heat::ConjugateHeatFlow;
use crate::{Error, Result};

/// Floor applied to w so that w² ln w² stays finite.
const W_FLOOR: f64 = 1e-300;
/// Tolerance on the unit-mass constraint of a supplied potential.
const MASS_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialProfile {
    pub f: Vec<f64>,
    pub w: Vec<f64>,
    pub tau: f64,
}

impl PotentialProfile {
    pub fn from_f(n: usize, f: Vec<f64>, tau: f64) -> Self {
        let c = (4.0 * PI * tau).powf(-(n as f64) / 4.0);
        let w = f.iter().map(|v| c * (-0.5 * v).exp()).collect();
        Self { f, w, tau }
    }

    pub fn from_w(n: usize, w: Vec<f64>, tau: f64) -> Self {
        let shift = 0.5 * n as f64 * (4.0 * PI * tau).ln();
        let f = w.iter().map(|&v| -(v.max(W_FLOOR) * v.max(W_FLOOR)).ln() - shift).collect();
        Self { f, w, tau }
    }

    /// The constant potential satisfying the mass constraint on `g`.
    pub fn constant(g: &WarpedMetric, tau: f64) -> Self {
        let w = vec![1.0 / g.volume().sqrt(); g.grid_size() + 1];
        Self::from_w(g.dim(), w, tau)
    }

    pub fn is_constant(&self, tol: f64) -> bool {
        let (lo, hi) = interior_range(&self.f);
        hi - lo <= tol
    }
}

fn interior_range(f: &[f64]) -> (f64, f64) {
    f[1..f.len() - 1].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub w: f64,
    pub mu: f64,
    pub nu: f64,
    pub nash: Option<f64>,
    pub tau: f64,
    pub tau_grid: Vec<f64>,
    pub nu_argmin_tau: f64,
    pub minimizer: PotentialProfile,
    pub iterations: usize,
    pub residual: f64,
}

/// Discrete pieces shared by every evaluation on one metric.
struct Quadrature {
    n: usize,
    mass: Vec<f64>,
    edge: Vec<f64>,
    scalar: Vec<f64>,
}

impl Quadrature {
    fn new(g: &WarpedMetric) -> Result<Self> {
        let curv = curvature(g)?;
        let mass = g.volume_weights();
        let h = g.h();
        let om = crate::unit_sphere_volume(g.dim() - 1);
        let (u, phi) = (g.u(), g.phi());
        let m = u.len();
        // edge i joins nodes i and i+1; the two pole edges carry no coupling
        let mut edge = vec![0.0; m - 1];
        for i in 1..m - 2 {
            let p = 0.5 * (phi[i] + phi[i + 1]);
            let uu = 0.5 * (u[i] + u[i + 1]);
            edge[i] = om * p.powi(g.dim() as i32 - 1) / (uu * h);
        }
        Ok(Self { n: g.dim(), mass, edge, scalar: curv.scalar })
    }

    fn mass_of(&self, w: &[f64]) -> f64 {
        self.mass.iter().zip(w).map(|(m, v)| m * v * v).sum()
    }

    fn energy(&self, w: &[f64], tau: f64) -> f64 {
        let mut e = 0.0;
        for i in 1..w.len() - 2 {
            let d = w[i + 1] - w[i];
            e += 4.0 * tau * self.edge[i] * d * d;
        }
        let last = w.len() - 1;
        for ((wi, m), r) in w[1..last].iter().zip(&self.mass[1..last]).zip(&self.scalar[1..last]) {
            let v2 = wi * wi;
            let ent = if v2 > 0.0 { v2 * v2.ln() } else { 0.0 };
            e += m * (tau * r * v2 - ent);
        }
        let n = self.n as f64;
        e - 0.5 * n * (4.0 * PI * tau).ln() - n
    }

    /// Mass-preconditioned gradient, projected onto the tangent of the constraint.
    fn residual(&self, w: &[f64], tau: f64) -> (Vec<f64>, f64) {
        let m = w.len();
        let mut g = vec![0.0; m];
        for i in 1..m - 1 {
            let mut lap = 0.0;
            if i >= 2 {
                lap += self.edge[i - 1] * (w[i] - w[i - 1]);
            }
            if i + 2 < m {
                lap += self.edge[i] * (w[i] - w[i + 1]);
            }
            let v2 = w[i] * w[i];
            let ln = if v2 > 0.0 { v2.ln() } else { 0.0 };
            g[i] = 4.0 * tau * lap / self.mass[i] + tau * self.scalar[i] * w[i] - w[i] * ln - w[i];
        }
        let lambda: f64 = (1..m - 1).map(|i| self.mass[i] * g[i] * w[i]).sum();
        for i in 1..m - 1 {
            g[i] -= lambda * w[i];
        }
        let norm = (1..m - 1).map(|i| self.mass[i] * g[i] * g[i]).sum::<f64>().sqrt();
        (g, norm)
    }

    fn normalize(&self, w: &mut [f64]) {
        let last = w.len() - 1;
        for v in w.iter_mut() {
            *v = v.abs().max(W_FLOOR);
        }
        w[0] = w[1];
        w[last] = w[last - 1];
        let s = self.mass_of(w).sqrt();
        for v in w.iter_mut() {
            *v /= s;
        }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.mass.iter().zip(a.iter().zip(b)).map(|(m, (x, y))| m * x * y).sum()
    }
}

/// 𝒲(g, f, τ) for a potential satisfying the unit-mass constraint.
pub fn w_functional(g: &WarpedMetric, f: &PotentialProfile, tau: f64) -> Result<f64> {
    let q = Quadrature::new(g)?;
    if f.w.len() != g.grid_size() + 1 {
        return Err(Error::Shape(format!("potential has {} nodes", f.w.len())));
    }
    let mut w = f.w.clone();
    let last = w.len() - 1;
    w[0] = w[1];
    w[last] = w[last - 1];
    let mass = q.mass_of(&w);
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidPotential(format!("total mass {mass:.9} differs from 1")));
    }
    Ok(q.energy(&w, tau))
}

/// 𝒲 of the density v of a probability measure (v = w²).
pub fn w_of_density(g: &WarpedMetric, v: &[f64], tau: f64) -> Result<f64> {
    let w: Vec<f64> = v.iter().map(|x| x.max(0.0).sqrt()).collect();
    w_functional(g, &PotentialProfile::from_w(g.dim(), w, tau), tau)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Starts {
    /// Constant initial guess only.
    Constant,
    /// Also try Gaussians centred at each pole and keep the lowest value.
    WithPoleGaussians,
}

#[derive(Clone, Debug)]
pub struct MinimizerOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub starts: Starts,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100_000, starts: Starts::WithPoleGaussians, warm_start: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimizer {
    pub potential: PotentialProfile,
    pub mu: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn descend(q: &Quadrature, mut w: Vec<f64>, tau: f64, opts: &MinimizerOptions) -> Result<Minimizer> {
    q.normalize(&mut w);
    let (mut r, mut norm) = q.residual(&w, tau);
    let mut e = q.energy(&w, tau);
    let stiff = (1..w.len() - 2)
        .map(|i| 8.0 * tau * (q.edge[i] + q.edge[i - 1]) / q.mass[i].max(f64::MIN_POSITIVE))
        .fold(1.0f64, f64::max);
    let mut alpha = 1.0 / stiff;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    // nonmonotone reference: the largest of the last few accepted energies
    let mut recent = std::collections::VecDeque::from([e]);
    let mut it = 0;
    while norm > opts.tol {
        if it >= opts.max_iter {
            return Err(Error::MinimizerFailure { iterations: it, grad_norm: norm });
        }
        if let Some((wp, rp)) = &prev {
            let s: Vec<f64> = w.iter().zip(wp).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = r.iter().zip(rp).map(|(a, b)| a - b).collect();
            let sy = q.dot(&s, &y);
            if sy > 0.0 {
                alpha = (q.dot(&s, &s) / sy).clamp(1e-3 / stiff, 1e6 / stiff);
            }
        }
        // nonmonotone Armijo backtracking; the slack absorbs rounding in the energy
        let e_ref = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let slack = 64.0 * f64::EPSILON * (1.0 + e.abs());
        let mut trial;
        let mut e_trial;
        let mut a = alpha;
        loop {
            trial = w.iter().zip(&r).map(|(x, d)| x - a * d).collect::<Vec<_>>();
            q.normalize(&mut trial);
            e_trial = q.energy(&trial, tau);
            if e_trial <= e_ref - 1e-4 * a * norm * norm + slack || a < 1e-14 / stiff {
                break;
            }
            a *= 0.5;
        }
        recent.push_back(e_trial);
        if recent.len() > 10 {
            recent.pop_front();
        }
        let (r_new, n_new) = q.residual(&trial, tau);
        if !(e_trial.is_finite() && n_new.is_finite()) {
            return Err(Error::NonFinite("entropy minimizer"));
        }
        prev = Some((std::mem::replace(&mut w, trial), std::mem::replace(&mut r, r_new)));
        norm = n_new;
        e = e_trial;
        it += 1;
    }
    let mu = e;
    Ok(Minimizer { potential: PotentialProfile::from_w(q.n, w, tau), mu, iterations: it, grad_norm: norm })
}

/// μ(g, τ) by projected descent on the unit sphere of w.
pub fn mu_minimize(g: &WarpedMetric, tau: f64) -> Result<Minimizer> {
    mu_minimize_with(g, tau, &MinimizerOptions::default())
}

pub fn mu_minimize_with(g: &WarpedMetric, tau: f64, opts: &MinimizerOptions) -> Result<Minimizer> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Range(format!("scale tau = {tau} must be positive")));
    }
    let q = Quadrature::new(g)?;
    let m = g.grid_size() + 1;
    let mut starts = vec![opts.warm_start.clone().unwrap_or_else(|| vec![1.0; m])];
    if opts.starts == Starts::WithPoleGaussians {
        let s = g.arclength();
        let len = s[m - 1];
        for pole in [0.0, len] {
            starts.push(s.iter().map(|x| (-(x - pole).powi(2) / (8.0 * tau)).exp()).collect());
        }
    }
    let mut best: Option<Minimizer> = None;
    let mut last_err = None;
    for w0 in starts {
        match descend(&q, w0, tau, opts) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.mu < b.mu - 1e-12) {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap())
}

/// Closed-form μ restricted to constant potentials on a homogeneous metric.
pub fn mu_hom_restricted(g: &HomogeneousMetric, tau: f64) -> f64 {
    let n = g.dim() as f64;
    tau * g.scalar_curvature() + g.volume().ln() - 0.5 * n * (4.0 * PI * tau).ln() - n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuReport {
    pub nu: f64,
    pub argmin_tau: f64,
    pub values: Vec<(f64, Option<f64>)>,
    pub failures: usize,
}

/// Geometric grid of `count` points on [lo, hi].
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (count - 1) as f64;
    (0..count).map(|k| lo * (r * k as f64).exp()).collect()
}

/// min over the grid of μ(g, τ); up to `max_fail_fraction` of the points may fail.
pub fn nu_functional(g: &WarpedMetric, taus: &[f64], max_fail_fraction: f64) -> Result<NuReport> {
    if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::Range("tau grid must be non-empty, positive and finite".into()));
    }
    use rayon::prelude::*;
    let results: Vec<Result<Minimizer>> = taus.par_iter().map(|&t| mu_minimize(g, t)).collect();
    let mut values = Vec::with_capacity(taus.len());
    let mut failures = 0;
    let mut best = (f64::INFINITY, f64::NAN);
    let mut first_err = None;
    for (&t, r) in taus.iter().zip(results) {
        match r {
            Ok(m) => {
                if m.mu < best.0 {
                    best = (m.mu, t);
                }
                values.push((t, Some(m.mu)));
            }
            Err(e) => {
                failures += 1;
                values.push((t, None));
                first_err.get_or_insert(e);
            }
        }
    }
    if failures as f64 > max_fail_fraction * taus.len() as f64 || !best.0.is_finite() {
        return Err(first_err.unwrap_or(Error::NonFinite("nu")));
    }
    Ok(NuReport { nu: best.0, argmin_tau: best.1, values, failures })
}

/// ν over the grid using the closed form restricted to constants.
pub fn nu_hom_restricted(g: &HomogeneousMetric, taus: &[f64]) -> (f64, f64) {
    taus.iter()
        .map(|&t| (mu_hom_restricted(g, t), t))
        .fold((f64::INFINITY, f64::NAN), |a, b| if b.0 < a.0 { b } else { a })
}

/// Components of Ric + ∇²f − g/(2τ) in the radial and spherical directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolitonResidual {
    pub radial: Vec<f64>,
    pub spherical: Vec<f64>,
    pub sup: f64,
    /// L² norm against the probability measure (4πτ)^{-n/2}e^{-f} dg.
    pub l2: f64,
}

pub fn shrinker_residual(g: &WarpedMetric, f: &PotentialProfile, tau: f64) -> Result<SolitonResidual> {
    let curv = curvature(g)?;
    let (fs, fss) = g.scalar_derivs(&f.f);
    let d = g.derivatives();
    let m = fs.len();
    let n = g.dim() as f64;
    let half = 0.5 / tau;
    let mut radial = vec![0.0; m];
    let mut spherical = vec![0.0; m];
    for i in 0..m {
        let hess_sph = if i == 0 || i == m - 1 { fss[i] } else { d.phi_s[i] * fs[i] / g.phi()[i] };
        radial[i] = curv.ric_rad[i] + fss[i] - half;
        spherical[i] = curv.ric_sph[i] + hess_sph - half;
    }
    let weights = g.volume_weights();
    let mut l2 = 0.0;
    let mut mass = 0.0;
    let mut sup: f64 = 0.0;
    for i in 0..m {
        let p = weights[i] * f.w[i] * f.w[i];
        let t2 = radial[i] * radial[i] + (n - 1.0) * spherical[i] * spherical[i];
        l2 += p * t2;
        mass += p;
        sup = sup.max(t2.sqrt());
    }
    Ok(SolitonResidual { radial, spherical, sup, l2: (l2 / mass).sqrt() })
}

/// Residual norm on a homogeneous metric with constant potential (sup = L²).
pub fn shrinker_residual_hom(g: &HomogeneousMetric, tau: f64) -> f64 {
    let half = 0.5 / tau;
    g.factors().iter().map(|f| f.dim as f64 * (f.ricci() - half).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuGradient {
    pub radial: Vec<f64>,
    pub spherical: Vec<f64>,
    pub l2: f64,
    pub mu: f64,
    pub minimizer: PotentialProfile,
}

/// −2(Ric + ∇²f_g − g/2) at τ = 1 and its L² norm.
pub fn mu_gradient(g: &WarpedMetric) -> Result<MuGradient> {
    let opts = MinimizerOptions { starts: Starts::Constant, ..Default::default() };
    mu_gradient_with(g, &opts)
}

pub fn mu_gradient_with(g: &WarpedMetric, opts: &MinimizerOptions) -> Result<MuGradient> {
    let min = mu_minimize_with(g, 1.0, opts)?;
    let res = shrinker_residual(g, &min.potential, 1.0)?;
    Ok(MuGradient {
        radial: res.radial.iter().map(|v| -2.0 * v).collect(),
        spherical: res.spherical.iter().map(|v| -2.0 * v).collect(),
        l2: 2.0 * res.l2,
        mu: min.mu,
        minimizer: min.potential,
    })
}

/// Nash entropy −∫ v ln v dg − (n/2) ln(4πτ) − n/2 of a density v.
pub fn nash_of_density(n: usize, v: &[f64], weights: &[f64], tau: f64) -> Result<f64> {
    let mass: f64 = v.iter().zip(weights).map(|(a, b)| a * b).sum();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::Unnormalized(format!("kernel mass {mass:.9}")));
    }
    let ent: f64 = v.iter().zip(weights).filter(|(a, _)| **a > 0.0).map(|(a, b)| b * a * a.ln()).sum();
    let n = n as f64;
    Ok(-ent - 0.5 * n * (4.0 * PI * tau).ln() - 0.5 * n)
}

/// Nash entropy of a kernel at stored slice `slice`, with τ measured from its base.
pub fn nash_entropy(kernel: &ConjugateHeatFlow, slice: usize) -> Result<f64> {
    let tau = kernel.tau(slice);
    nash_of_density(kernel.dim(), &kernel.densities[slice], &kernel.weights[slice], tau)
}

/// 𝒲 of a kernel slice (the minimizer-free value along the flow).
pub fn kernel_w(kernel: &ConjugateHeatFlow, g: &WarpedMetric, slice: usize) -> Result<f64> {
    w_of_density(g, &kernel.densities[slice], kernel.tau(slice))
}

/// Report at scale τ with ν taken over `tau_grid`; 𝒲 is evaluated at the constant potential.
pub fn entropy_report(g: &WarpedMetric, tau: f64, tau_grid: &[f64], nash: Option<f64>) -> Result<EntropyReport> {
    let min = mu_minimize(g, tau)?;
    let w = w_functional(g, &PotentialProfile::constant(g, tau), tau)?;
    let nu = nu_functional(g, tau_grid, 0.0)?;
    let res = shrinker_residual(g, &min.potential, tau)?;
    Ok(EntropyReport {
        w,
        mu: min.mu,
        nu: nu.nu.min(min.mu),
        nash,
        tau,
        tau_grid: tau_grid.to_vec(),
        nu_argmin_tau: nu.argmin_tau,
        iterations: min.iterations,
        residual: res.l2,
        minimizer: min.potential,
    })
}
