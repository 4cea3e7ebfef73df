use serde::{Deserialize, Serialize};

use super::io::{fmt_f64, CsvTable};
use crate::diag::{
    classify_dichotomy, classify_dichotomy_with, lojasiewicz_exponent, lojasiewicz_fit, rate_consistency,
    DichotomyState, DichotomyVerdict, GradientFit, LojasiewiczFit,
};
use crate::entropy::{mu_gradient, mu_minimize};
use crate::flow::{gauged_ancient_flow, run_hom, run_ricci, Direction, FlowTrajectory, GaugeOptions, RicciConfig};
use crate::geom::metric_distance;
use crate::mflow::{
    heat_segment_flow, scaling_experiment, shrinker_export, tangent_flow_experiment, time_shift_experiment, ScaleRow,
    ShiftRow,
};
use crate::{Error, Factor, HomogeneousMetric, RescalingSequence, Result, WarpedMetric};

/// An artifact produced by a pipeline: relative path and contents.
pub type Artifact = (String, Vec<u8>);

/// Error raised inside a named pipeline stage.
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

trait Staged<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Staged<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

type Outcome = std::result::Result<Vec<Artifact>, StageError>;

fn json<T: Serialize>(name: &str, value: &T) -> Result<Artifact> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    Ok((name.to_string(), (text + "\n").into_bytes()))
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(msg()))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    check(v > 0.0 && v.is_finite(), || format!("{name} must be positive and finite, got {v}"))
}

/// A registered experiment: its parameters parse from the config's `params` table.
pub trait Experiment: Sized + Default + Serialize + for<'de> Deserialize<'de> {
    const ID: &'static str;
    const SUMMARY: &'static str;
    fn validate(&self) -> Result<()>;
    fn run(&self) -> Outcome;
}

// backward-modified-rate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackwardRate {
    pub n: usize,
    pub grid_size: usize,
    pub s_max: f64,
    pub ds: f64,
    pub delta: f64,
    pub shape_eps: f64,
    pub dt_max: f64,
    /// Samples with s below this are excluded from fits and the monotone tail.
    pub burn_in: f64,
    /// μ-gap values at or below this are treated as converged.
    pub floor: f64,
}

impl Default for BackwardRate {
    fn default() -> Self {
        let g = GaugeOptions::default();
        Self {
            n: g.n,
            grid_size: g.grid_size,
            s_max: g.s_max,
            ds: g.ds,
            delta: g.delta,
            shape_eps: g.shape_eps,
            dt_max: g.dt_max,
            burn_in: 1.0,
            floor: 1e-13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardRateSummary {
    pub mu_sphere: f64,
    pub distance_tail_monotone: bool,
    pub final_distance: f64,
    pub mu_gap_fit: Option<LojasiewiczFit>,
    pub gradient_fit: Option<GradientFit>,
    /// |β(2α − 1) − 1| with α from the gradient fit and β from the gap fit.
    pub consistency: Option<f64>,
    pub consistency_ok: bool,
    pub psi_repair: f64,
}

impl Experiment for BackwardRate {
    const ID: &'static str = "backward-modified-rate";
    const SUMMARY: &'static str =
        "gauged backward modified flow from a perturbed sphere; distance and entropy-gap rates";

    fn validate(&self) -> Result<()> {
        check(self.n >= 3, || format!("n = {} must be at least 3", self.n))?;
        check(self.grid_size >= 16, || format!("grid_size = {} below 16", self.grid_size))?;
        for (k, v) in [
            ("s_max", self.s_max),
            ("ds", self.ds),
            ("delta", self.delta),
            ("dt_max", self.dt_max),
            ("floor", self.floor),
        ] {
            positive(k, v)?;
        }
        check(self.ds < self.s_max, || "ds must be below s_max".into())?;
        check(self.burn_in >= 0.0 && self.burn_in < self.s_max, || "burn_in must lie in [0, s_max)".into())?;
        check(self.shape_eps.abs() < 0.5, || "shape_eps must be below 0.5 in size".into())
    }

    fn run(&self) -> Outcome {
        let opts = GaugeOptions {
            n: self.n,
            grid_size: self.grid_size,
            s_max: self.s_max,
            ds: self.ds,
            delta: self.delta,
            shape_eps: self.shape_eps,
            dt_max: self.dt_max,
        };
        let gt = gauged_ancient_flow(&opts).stage("gauged flow")?;
        let radius = (2.0 * (self.n as f64 - 1.0)).sqrt();
        let sphere = WarpedMetric::round_sphere(self.n, radius, self.grid_size).stage("reference sphere")?;
        let mu0 = mu_minimize(&sphere, 1.0).stage("reference entropy")?.mu;
        let mut table = CsvTable::new(&["s", "distance", "mu", "mu_gap", "grad_l2"]);
        let (mut s, mut dist, mut gap, mut grad) = (vec![], vec![], vec![], vec![]);
        for (k, g) in gt.gbar.iter().enumerate() {
            let d = metric_distance(g, &sphere, 2).stage("distance")?.value;
            let gr = mu_gradient(g).stage("entropy gradient")?.l2;
            let gk = (gt.mu_series[k] - mu0).abs();
            table.push_floats(&[gt.s_times[k], d, gt.mu_series[k], gk, gr]);
            if gt.s_times[k] >= self.burn_in {
                s.push(gt.s_times[k]);
                dist.push(d);
                gap.push(gk);
                grad.push(gr);
            }
        }
        let fit = lojasiewicz_fit(&gap, &s, self.floor).ok();
        let gfit = lojasiewicz_exponent(&gap, &grad, self.floor).ok();
        let consistency = match (&fit, &gfit) {
            (Some(f), Some(g)) => Some(rate_consistency(g.alpha, f.beta)),
            _ => None,
        };
        let summary = BackwardRateSummary {
            mu_sphere: mu0,
            distance_tail_monotone: dist.windows(2).all(|w| w[1] <= w[0]),
            final_distance: *dist.last().unwrap_or(&f64::NAN),
            mu_gap_fit: fit,
            gradient_fit: gfit,
            consistency,
            consistency_ok: consistency.is_some_and(|c| c <= 0.25),
            psi_repair: gt.psi_repair,
        };
        Ok(vec![
            ("series.csv".into(), table.to_bytes().stage("write")?),
            json("summary.json", &summary).stage("write")?,
        ])
    }
}

// dichotomy-sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DichotomySweep {
    /// Number of rescaling times per fixture.
    pub samples: usize,
    /// Also classify a perturbed-sphere PDE run near its singular time.
    pub pde: bool,
    pub pde_grid_size: usize,
}

impl Default for DichotomySweep {
    fn default() -> Self {
        Self { samples: 30, pde: false, pde_grid_size: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureVerdict {
    pub fixture: String,
    pub verdict: Option<DichotomyVerdict>,
    pub error: Option<String>,
}

fn verdict_row(name: &str, r: Result<DichotomyVerdict>) -> FixtureVerdict {
    match r {
        Ok(v) => FixtureVerdict { fixture: name.into(), verdict: Some(v), error: None },
        Err(e) => FixtureVerdict { fixture: name.into(), verdict: None, error: Some(e.to_string()) },
    }
}

/// Homogeneous shrinker whose factors reach the normalized size at t = −1, with
/// the sequence Q_i = 1/|t_i|.
fn shrinker_fixture(factors: &[usize], samples: usize) -> Result<DichotomyVerdict> {
    let t0 = -64.0;
    let g0 = HomogeneousMetric::new(
        factors.iter().map(|&p| Factor::sphere(p, (2.0 * (p as f64 - 1.0) * -t0).sqrt())).collect(),
    )?;
    let times: Vec<f64> = (0..samples).map(|k| t0 * (1e-3f64 / 64.0).powf(k as f64 / (samples - 1) as f64)).collect();
    let traj = run_hom(&g0, t0, &times)?;
    let q = times.iter().map(|t| 1.0 / t.abs()).collect();
    classify_dichotomy(&traj, &RescalingSequence::new(times, q)?)
}

/// Static flat torus with t_i → −∞ and Q_i = |t_i|^{−1/2}.
fn torus_fixture(samples: usize) -> Result<DichotomyVerdict> {
    let g = HomogeneousMetric::new(vec![Factor::torus(3, 1.0)])?;
    let times: Vec<f64> = (0..samples).map(|k| -(10f64).powf(6.0 * (1.0 - k as f64 / (samples - 1) as f64))).collect();
    let traj = FlowTrajectory::new(times.clone(), vec![g; samples], Direction::Forward)?;
    let q = times.iter().map(|t| t.abs().powf(-0.5)).collect();
    classify_dichotomy(&traj, &RescalingSequence::new(times, q)?)
}

fn pde_fixture(samples: usize, grid: usize) -> Result<DichotomyVerdict> {
    let g = WarpedMetric::perturbed_sphere(3, 2.0, 0.3, grid)?;
    let run = run_ricci(&g, &RicciConfig { store_every: 1e-3, ..RicciConfig::adaptive(0.0, 2.0, 1e-3) })?;
    let big_t = run
        .traj
        .singular_time_estimate
        .ok_or_else(|| Error::Precondition("run did not reach a singular time".into()))?;
    let span = big_t - run.traj.first_time();
    let last_left = big_t - run.traj.last_time();
    let lo = (0.02 * span).max(2.0 * last_left);
    let hi = 0.2 * span;
    let t: Vec<f64> = (0..samples).map(|k| -hi * (lo / hi).powf(k as f64 / (samples - 1) as f64)).collect();
    let q = t.iter().map(|ti| run.traj.at(ti + big_t)?.max_rm()).collect::<Result<Vec<_>>>()?;
    let tol = WarpedMetric::default_tolerances();
    classify_dichotomy_with(&run.traj, &RescalingSequence::new(t, q)?, tol, big_t)
}

use crate::flow::MetricState;

impl Experiment for DichotomySweep {
    const ID: &'static str = "dichotomy-sweep";
    const SUMMARY: &'static str = "shrinker or Ricci-flat classification of rescaled limits on exact and PDE fixtures";

    fn validate(&self) -> Result<()> {
        check(self.samples >= 3, || format!("samples = {} below 3", self.samples))?;
        check(self.pde_grid_size >= 32, || format!("pde_grid_size = {} below 32", self.pde_grid_size))
    }

    fn run(&self) -> Outcome {
        let mut rows = vec![
            verdict_row("s3-shrinker", shrinker_fixture(&[3], self.samples)),
            verdict_row("s2xs2-shrinker", shrinker_fixture(&[2, 2], self.samples)),
            verdict_row("s2xs3-shrinker", shrinker_fixture(&[2, 3], self.samples)),
            verdict_row("flat-torus", torus_fixture(self.samples)),
        ];
        if self.pde {
            rows.push(verdict_row("perturbed-sphere-pde", pde_fixture(self.samples, self.pde_grid_size)));
        }
        let mut table = CsvTable::new(&["fixture", "index", "product"]);
        for r in &rows {
            if let Some(v) = &r.verdict {
                for (i, p) in v.qt_products.iter().enumerate() {
                    table.push(vec![r.fixture.clone(), i.to_string(), fmt_f64(*p)]);
                }
            }
        }
        Ok(vec![
            ("products.csv".into(), table.to_bytes().stage("write")?),
            json("verdicts.json", &rows).stage("write")?,
        ])
    }
}

// heat-flow fixture shared by the continuity experiments

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatFixture {
    pub length: f64,
    pub points: usize,
    pub t_min: f64,
    pub steps: usize,
    /// Index of the base point on the top slice.
    pub base: usize,
}

impl Default for HeatFixture {
    fn default() -> Self {
        Self { length: 8.0, points: 64, t_min: -2.0, steps: 100, base: 32 }
    }
}

impl HeatFixture {
    fn validate(&self) -> Result<()> {
        positive("length", self.length)?;
        check(self.t_min < 0.0, || "t_min must be negative".into())?;
        check(self.points >= 2 && self.points <= 512, || format!("points = {} outside [2, 512]", self.points))?;
        check(self.steps >= 2, || "steps must be at least 2".into())?;
        check(self.base < self.points, || format!("base {} outside the slice", self.base))
    }

    fn grid(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.t_min * (1.0 - k as f64 / self.steps as f64)).collect()
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeShift {
    pub fixture: HeatFixture,
    /// Decreasing shifts.
    pub sigmas: Vec<f64>,
    pub beta: f64,
    pub threshold: f64,
}

impl Default for TimeShift {
    fn default() -> Self {
        Self {
            fixture: HeatFixture::default(),
            sigmas: vec![0.4, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001],
            beta: 0.25,
            threshold: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub rows: Vec<ShiftRow>,
    pub monotone_trend: bool,
    /// Largest σ from which all smaller shifts are below the threshold.
    pub below_threshold_from: Option<f64>,
    pub exception_within_bound: bool,
}

/// Largest parameter from which every later value is below `threshold`.
fn tail_below(params: &[f64], values: &[f64], threshold: f64) -> Option<f64> {
    let k = values.iter().rposition(|v| *v >= threshold).map_or(0, |i| i + 1);
    params.get(k).copied()
}

impl Experiment for TimeShift {
    const ID: &'static str = "timeshift-continuity";
    const SUMMARY: &'static str = "F-distance bounds between the heat-flow fixture and its time shifts";

    fn validate(&self) -> Result<()> {
        self.fixture.validate()?;
        check(!self.sigmas.is_empty() && strictly_decreasing(&self.sigmas), || {
            "sigmas must be a decreasing list".into()
        })?;
        check(self.sigmas.iter().all(|s| *s > 0.0 && *s < -self.fixture.t_min), || {
            "sigmas must lie inside the time window".into()
        })?;
        positive("beta", self.beta)?;
        positive("threshold", self.threshold)
    }

    fn run(&self) -> Outcome {
        let f = &self.fixture;
        let build = |t: &[f64]| heat_segment_flow(f.length, f.points, t);
        let rows = time_shift_experiment(&build, &f.grid(), f.base, &self.sigmas, self.beta).stage("time shift")?;
        let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
        let mut table = CsvTable::new(&["sigma", "f_bound", "exception_measure", "exception_bound"]);
        for r in &rows {
            table.push_floats(&[r.sigma, r.value, r.exception_measure, r.exception_bound]);
        }
        let summary = ShiftSummary {
            monotone_trend: values.windows(2).all(|w| w[1] <= w[0] + 1e-9),
            below_threshold_from: tail_below(&self.sigmas, &values, self.threshold),
            exception_within_bound: rows.iter().all(|r| r.exception_measure <= r.exception_bound),
            rows,
        };
        Ok(vec![("shift.csv".into(), table.to_bytes().stage("write")?), json("summary.json", &summary).stage("write")?])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scaling {
    pub fixture: HeatFixture,
    /// Decreasing factors above 1.
    pub lambdas: Vec<f64>,
}

impl Default for Scaling {
    fn default() -> Self {
        Self { fixture: HeatFixture::default(), lambdas: vec![1.5, 1.25, 1.1, 1.05, 1.01] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub rows: Vec<ScaleRow>,
    pub monotone_trend: bool,
}

impl Experiment for Scaling {
    const ID: &'static str = "scaling-continuity";
    const SUMMARY: &'static str = "F-distance bounds between the heat-flow fixture and its parabolic rescalings";

    fn validate(&self) -> Result<()> {
        self.fixture.validate()?;
        check(!self.lambdas.is_empty() && strictly_decreasing(&self.lambdas), || {
            "lambdas must be a decreasing list".into()
        })?;
        check(self.lambdas.iter().all(|l| *l >= 1.0 && l.is_finite()), || "lambdas must be at least 1".into())
    }

    fn run(&self) -> Outcome {
        let f = &self.fixture;
        let build = |t: &[f64]| heat_segment_flow(f.length, f.points, t);
        let rows = scaling_experiment(&build, &f.grid(), f.base, &self.lambdas).stage("scaling")?;
        let mut table = CsvTable::new(&["lambda", "f_bound", "exception_measure"]);
        for r in &rows {
            table.push_floats(&[r.lambda, r.value, r.exception_measure]);
        }
        let summary = ScaleSummary { monotone_trend: rows.windows(2).all(|w| w[1].value <= w[0].value + 1e-9), rows };
        Ok(vec![
            ("scaling.csv".into(), table.to_bytes().stage("write")?),
            json("summary.json", &summary).stage("write")?,
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasePair {
    pub t0: f64,
    pub x0: usize,
    pub t1: f64,
    pub y0: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TangentBasepoint {
    pub n: usize,
    pub points: usize,
    /// The grid is {−q^k : k = 0..=grid_steps} ∪ {0} with q^{grid_steps} = grid_floor.
    pub grid_steps: usize,
    pub grid_floor: f64,
    pub lambdas: Vec<f64>,
    pub pairs: Vec<BasePair>,
    pub threshold: f64,
}

impl Default for TangentBasepoint {
    fn default() -> Self {
        Self {
            n: 3,
            points: 48,
            grid_steps: 40,
            grid_floor: 1e-4,
            lambdas: vec![0.5, 0.25, 0.125, 0.0625],
            pairs: vec![
                BasePair { t0: -0.05, x0: 24, t1: -0.05, y0: 36 },
                BasePair { t0: -0.05, x0: 24, t1: -0.1, y0: 24 },
                BasePair { t0: -0.05, x0: 10, t1: -0.1, y0: 40 },
            ],
            threshold: 0.05,
        }
    }
}

impl TangentBasepoint {
    pub fn grid(&self) -> Vec<f64> {
        let q = self.grid_floor.powf(1.0 / self.grid_steps as f64);
        let mut g: Vec<f64> = (0..=self.grid_steps).map(|k| -q.powi(k as i32)).collect();
        g.push(0.0);
        g
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentRow {
    pub pair: BasePair,
    pub values: Vec<f64>,
    pub exception_measures: Vec<f64>,
    pub below_threshold: bool,
}

impl Experiment for TangentBasepoint {
    const ID: &'static str = "tangent-basepoint";
    const SUMMARY: &'static str = "tangent-flow comparisons at two base points of the exact shrinker export";

    fn validate(&self) -> Result<()> {
        check(self.n >= 2, || "n must be at least 2".into())?;
        check(self.points >= 4 && self.points <= 512, || format!("points = {} outside [4, 512]", self.points))?;
        check(self.grid_steps >= 2, || "grid_steps must be at least 2".into())?;
        check(self.grid_floor > 0.0 && self.grid_floor < 1.0, || "grid_floor must lie in (0, 1)".into())?;
        check(!self.lambdas.is_empty() && strictly_decreasing(&self.lambdas), || {
            "lambdas must be a decreasing list".into()
        })?;
        check(self.lambdas.iter().all(|l| *l > 0.0), || "lambdas must be positive".into())?;
        check(!self.pairs.is_empty(), || "at least one base pair is needed".into())?;
        for p in &self.pairs {
            check(p.t0 < 0.0 && p.t1 < 0.0, || format!("base times of {p:?} must be negative"))?;
            check(p.x0 < self.points && p.y0 < self.points, || format!("base points of {p:?} outside the slice"))?;
        }
        positive("threshold", self.threshold)
    }

    fn run(&self) -> Outcome {
        let build = |t: &[f64]| shrinker_export(self.n, self.points, t);
        let grid = self.grid();
        let mut rows = Vec::new();
        let mut table = CsvTable::new(&["pair", "lambda", "f_bound", "exception_measure"]);
        for (i, p) in self.pairs.iter().enumerate() {
            let rep =
                tangent_flow_experiment(&build, (p.t0, p.x0), (p.t1, p.y0), &self.lambdas, &grid, &[self.threshold])
                    .stage("tangent flow")?;
            for ((l, v), m) in rep.lambdas.iter().zip(&rep.values).zip(&rep.exception_measures) {
                table.push(vec![i.to_string(), fmt_f64(*l), fmt_f64(*v), fmt_f64(*m)]);
            }
            rows.push(TangentRow {
                pair: p.clone(),
                below_threshold: rep.below.first().is_some_and(|b| b.1),
                values: rep.values,
                exception_measures: rep.exception_measures,
            });
        }
        Ok(vec![("tangent.csv".into(), table.to_bytes().stage("write")?), json("summary.json", &rows).stage("write")?])
    }
}
