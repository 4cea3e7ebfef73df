//! End-to-end acceptance suite. Each test prints one PASS/FAIL line, then asserts.

use std::io::Write;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riccilab::diag::{
    classify_dichotomy, lojasiewicz_exponent, lojasiewicz_fit, noncollapse_check, rate_consistency, sobolev_nu_bound,
    type_one_from_run, TYPE_ONE_FLOOR,
};
use riccilab::entropy::{geometric_grid, kernel_w, mu_gradient, mu_minimize, nash_entropy, shrinker_residual_hom};
use riccilab::flow::{gauged_ancient_flow, run_hom, run_ricci, GaugeOptions, RicciConfig, RicciRun};
use riccilab::geom::metric_distance;
use riccilab::heat::{kernel_from_point, KernelOptions};
use riccilab::mflow::{
    check_h_concentration, heat_segment_flow, one_point_flow, quotient_export, scaling_experiment, shrinker_export,
    tangent_flow_experiment, time_shift_experiment, variance_monotonicity, w1, w1_enumerate,
};
use riccilab::{
    DichotomyKind, Direction, Error, Factor, FiniteMetricFlow, FlowTrajectory, HomogeneousMetric, MeasureFlow,
    RescalingSequence, WarpedMetric,
};

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!("criterion {id:>2} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    // bypass the harness capture so the line shows in every run
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

/// Perturbed 3-sphere run to its first singular signal, shared by two criteria.
fn pde_run() -> &'static RicciRun {
    static RUN: OnceLock<RicciRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let g = WarpedMetric::perturbed_sphere(3, 2.0, 0.3, 256).unwrap();
        let cfg = RicciConfig { store_every: 1e-3, ..RicciConfig::adaptive(0.0, 1.0, 1e-4) };
        run_ricci(&g, &cfg).unwrap()
    })
}

#[test]
fn criterion_01_homogeneous_exact() {
    let times: Vec<f64> = (0..=20).map(|k| 0.04 * k as f64).collect();
    let mut worst: f64 = 0.0;
    for factors in [vec![3], vec![2, 2]] {
        let a0 = 3.0;
        let g0 = HomogeneousMetric::new(factors.iter().map(|&p| Factor::sphere(p, a0)).collect()).unwrap();
        let traj = run_hom(&g0, 0.0, &times).unwrap();
        for (t, g) in traj.times.iter().zip(&traj.states) {
            for (f, &p) in g.factors().iter().zip(&factors) {
                let exact = a0 * a0 - 2.0 * (p as f64 - 1.0) * t;
                worst = worst.max((f.scale * f.scale - exact).abs() / exact);
            }
        }
    }
    let mut residual: f64 = 0.0;
    for factors in [vec![3], vec![2, 2], vec![2, 3]] {
        let g = HomogeneousMetric::new(
            factors.iter().map(|&p| Factor::sphere(p, (2.0 * (p as f64 - 1.0)).sqrt())).collect(),
        )
        .unwrap();
        residual = residual.max(shrinker_residual_hom(&g, 1.0));
    }
    let pass = worst <= 1e-12 && residual <= 1e-12;
    report(
        1,
        "homogeneous radius law and shrinker residual",
        pass,
        format!("radius error {worst:.1e}, residual {residual:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_entropy_chain() {
    let run = pde_run();
    let t0 = 0.95 * run.traj.last_time();
    let k = kernel_from_point(&run.traj, 0, t0, &KernelOptions { smoothing_steps: 100, ..Default::default() }).unwrap();
    let tau0 = k.virtual_base - t0;
    let mut prev = f64::INFINITY;
    let (mut worst, mut checked): (f64, usize) = (0.0, 0);
    for s in 0..k.len() {
        let w = kernel_w(&k, &run.traj.at(k.times[s]).unwrap(), s).unwrap();
        let nash = nash_entropy(&k, s).unwrap();
        if k.tau(s) > 10.0 * tau0 {
            worst = worst.max(w - prev).max(w - nash).max(nash);
            checked += 1;
        }
        prev = w;
    }
    let pass = checked > 10 && worst <= 1e-8;
    report(2, "W monotone and W <= N <= 0", pass, format!("{checked} slices, worst violation {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_03_type_one() {
    let r = type_one_from_run(pde_run(), (0.02, 0.5)).unwrap();
    let margin = r.growth_min_margin.unwrap_or(f64::NEG_INFINITY);
    let pass = r.bounded && r.min >= TYPE_ONE_FLOOR && r.max <= 10.0 && margin >= -1e-3;
    report(
        3,
        "type-one curvature products",
        pass,
        format!("products in [{:.3}, {:.3}], margin {margin:.1e}", r.min, r.max),
    );
    assert!(pass);
}

#[test]
fn criterion_04_backward_modified_rate() {
    let opts = GaugeOptions::default();
    let gt = gauged_ancient_flow(&opts).unwrap();
    let sphere = WarpedMetric::round_sphere(opts.n, (2.0 * (opts.n as f64 - 1.0)).sqrt(), opts.grid_size).unwrap();
    let mu0 = mu_minimize(&sphere, 1.0).unwrap().mu;
    let (mut s, mut dist, mut gap, mut grad) = (vec![], vec![], vec![], vec![]);
    for (k, g) in gt.gbar.iter().enumerate() {
        if gt.s_times[k] < 1.0 {
            continue;
        }
        s.push(gt.s_times[k]);
        dist.push(metric_distance(g, &sphere, 2).unwrap().value);
        gap.push((gt.mu_series[k] - mu0).abs());
        grad.push(mu_gradient(g).unwrap().l2);
    }
    let monotone = dist.windows(2).all(|w| w[1] <= w[0]);
    let fit = lojasiewicz_fit(&gap, &s, 1e-13).unwrap();
    let gfit = lojasiewicz_exponent(&gap, &grad, 1e-13).unwrap();
    let consistency = rate_consistency(gfit.alpha, fit.beta);
    let pass = monotone && fit.beta > 0.0 && consistency <= 0.25;
    report(
        4,
        "backward modified flow rate",
        pass,
        format!(
            "distance monotone {monotone}, beta {:.3}, alpha {:.4}, |beta(2alpha-1)-1| {consistency:.3}",
            fit.beta, gfit.alpha
        ),
    );
    assert!(pass);
}

fn shrinker_fixture(factors: &[usize]) -> riccilab::Result<riccilab::DichotomyVerdict> {
    let (t0, samples) = (-64.0, 30);
    let g0 = HomogeneousMetric::new(
        factors.iter().map(|&p| Factor::sphere(p, (2.0 * (p as f64 - 1.0) * -t0).sqrt())).collect(),
    )?;
    let times: Vec<f64> = (0..samples).map(|k| t0 * (1e-3f64 / 64.0).powf(k as f64 / (samples - 1) as f64)).collect();
    let traj = run_hom(&g0, t0, &times)?;
    let q = times.iter().map(|t| 1.0 / t.abs()).collect();
    classify_dichotomy(&traj, &RescalingSequence::new(times, q)?)
}

#[test]
fn criterion_05_dichotomy() {
    let mut ok = true;
    let mut detail = Vec::new();
    for factors in [vec![3], vec![2, 2], vec![2, 3]] {
        let v = shrinker_fixture(&factors).unwrap();
        ok &= v.kind == DichotomyKind::Shrinker && v.exclusivity_ok && v.residual <= 1e-9;
        detail.push(format!("{factors:?} {:?} residual {:.1e}", v.kind, v.residual));
    }
    let samples = 30;
    let times: Vec<f64> = (0..samples).map(|k| -(10f64).powf(6.0 * (1.0 - k as f64 / (samples - 1) as f64))).collect();
    let torus = HomogeneousMetric::new(vec![Factor::torus(3, 1.0)]).unwrap();
    let traj = FlowTrajectory::new(times.clone(), vec![torus; samples], Direction::Forward).unwrap();
    let q = times.iter().map(|t| t.abs().powf(-0.5)).collect();
    let v = classify_dichotomy(&traj, &RescalingSequence::new(times, q).unwrap()).unwrap();
    ok &= v.kind == DichotomyKind::RicciFlat && v.exclusivity_ok;
    detail.push(format!("torus {:?}", v.kind));
    report(5, "shrinker or Ricci-flat dichotomy", ok, detail.join("; "));
    assert!(ok);
}

fn sphere_probes(radius: f64) -> Vec<riccilab::diag::NoncollapseProbe> {
    let g = WarpedMetric::round_sphere(3, radius, 128).unwrap();
    let big_t = radius * radius / 4.0;
    let t0 = 0.6 * big_t;
    let cfg = RicciConfig { store_every: 1e-3 * big_t, ..RicciConfig::adaptive(0.0, t0, 1e-3 * big_t) };
    let traj = run_ricci(&g, &cfg).unwrap().traj;
    let kernel = kernel_from_point(&traj, 0, t0, &KernelOptions::default()).unwrap();
    let slices: Vec<usize> = [0.1, 0.25, 0.5, 0.75]
        .iter()
        .map(|f| {
            let target = f * (big_t - t0);
            (0..kernel.len())
                .min_by(|a, b| (kernel.tau(*a) - target).abs().total_cmp(&(kernel.tau(*b) - target).abs()))
                .unwrap()
        })
        .collect();
    noncollapse_check(&traj, &kernel, &slices).unwrap()
}

#[test]
fn criterion_06_strong_noncollapse() {
    let a = sphere_probes(2.0);
    let b = sphere_probes(6.0);
    let min_margin = a.iter().chain(&b).map(|p| p.margin).fold(f64::INFINITY, f64::min);
    let all_pass = a.iter().chain(&b).all(|p| p.pass);
    let drift = a.iter().zip(&b).map(|(x, y)| (x.margin / y.margin - 1.0).abs()).fold(0.0, f64::max);
    let pass = all_pass && min_margin >= 1.0 && drift <= 1e-2;
    report(6, "strong noncollapsing", pass, format!("min margin {min_margin:.1}, scale drift {drift:.1e}"));
    assert!(pass);
}

fn variance_ok(flow: &FiniteMetricFlow) -> (bool, f64) {
    let top = flow.len() - 1;
    let m = flow.slices[top].len();
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for x in [0, m / 2, m - 1] {
        let r = variance_monotonicity(flow, &MeasureFlow::from_point(flow, top, x).unwrap()).unwrap();
        ok &= r.nondecreasing;
        worst = worst.min(r.worst_margin);
    }
    (ok, worst)
}

#[test]
fn criterion_07_concentration_and_variance() {
    let heat_times: Vec<f64> = (0..=10).map(|k| -1.0 + 0.1 * k as f64).collect();
    let heat = heat_segment_flow(8.0, 64, &heat_times).unwrap();
    let h = check_h_concentration(&heat, 1);
    let mut ok = h.pass && h.worst_margin >= -1e-9;
    let mut detail = vec![format!("heat concentration margin {:.2e}", h.worst_margin)];

    let g = WarpedMetric::perturbed_sphere(3, 2.0, 0.3, 64).unwrap();
    let traj = run_ricci(&g, &RicciConfig { store_every: 1e-2, ..RicciConfig::adaptive(0.0, 0.4, 1e-3) }).unwrap().traj;
    let fixtures = [
        ("heat", heat),
        ("one-point", one_point_flow(&[-1.0, -0.5, 0.0], 2.0).unwrap()),
        ("shrinker", shrinker_export(3, 24, &[-2.0, -1.0, -0.5]).unwrap()),
        ("pde quotient", quotient_export(&traj, &[0.1, 0.2, 0.3, 0.4], 0.45).unwrap()),
    ];
    for (name, f) in &fixtures {
        let (v, margin) = variance_ok(f);
        ok &= v;
        detail.push(format!("{name} variance margin {margin:.2e}"));
    }
    report(7, "H-concentration and variance monotonicity", ok, detail.join("; "));
    assert!(ok);
}

fn heat_grid() -> Vec<f64> {
    (0..=100).map(|k| -2.0 + 0.02 * k as f64).collect()
}

#[test]
fn criterion_08_time_shift() {
    let build = |t: &[f64]| heat_segment_flow(8.0, 64, t);
    let sigmas = [0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001];
    let rows = time_shift_experiment(&build, &heat_grid(), 32, &sigmas, 0.25).unwrap();
    let last = rows.last().unwrap().value;
    let exceptions_ok = rows.iter().all(|r| r.exception_measure <= r.exception_bound);
    let pass = last < 0.05 && exceptions_ok;
    report(8, "time-shift continuity", pass, format!("distance {last:.4} at shift {}", sigmas[sigmas.len() - 1]));
    assert!(pass);
}

#[test]
fn criterion_09_scaling() {
    let build = |t: &[f64]| heat_segment_flow(8.0, 64, t);
    let rows = scaling_experiment(&build, &heat_grid(), 32, &[1.5, 1.25, 1.1, 1.05, 1.01]).unwrap();
    let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let pass = monotone && values.last().unwrap() < values.first().unwrap();
    report(9, "scaling continuity", pass, format!("distances {values:.4?}"));
    assert!(pass);
}

#[test]
fn criterion_10_tangent_basepoint() {
    let q = (1e-4f64).powf(1.0 / 40.0);
    let mut grid: Vec<f64> = (0..=40).map(|k| -q.powi(k)).collect();
    grid.push(0.0);
    let build = |t: &[f64]| shrinker_export(3, 48, t);
    let lambdas = [0.5, 0.25, 0.125, 0.0625];
    let mut finals = Vec::new();
    for (x, y) in [((-0.05, 24), (-0.05, 36)), ((-0.05, 24), (-0.1, 24)), ((-0.05, 10), (-0.1, 40))] {
        let rep = tangent_flow_experiment(&build, x, y, &lambdas, &grid, &[0.05]).unwrap();
        finals.push(*rep.values.last().unwrap());
    }
    let pass = finals.iter().all(|v| *v < 0.05);
    report(10, "tangent flows independent of base point", pass, format!("final distances {finals:.3?}"));
    assert!(pass);
}

#[test]
fn criterion_11_w1_against_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let simplex = |rng: &mut ChaCha8Rng, m: usize| {
        let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    for _ in 0..10_000 {
        let m = rng.random_range(1..=6);
        let pts: Vec<[f64; 2]> = (0..m).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let dist: Vec<f64> = (0..m * m)
            .map(|k| {
                let (a, b) = (pts[k / m], pts[k % m]);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .collect();
        let (a, b) = (simplex(&mut rng, m), simplex(&mut rng, m));
        let fast = w1(&dist, &a, &b).unwrap().value;
        worst = worst.max((fast - w1_enumerate(&dist, &a, &b)).abs());
    }
    let pass = worst <= 1e-9;
    report(11, "W1 solver against vertex enumeration", pass, format!("10000 instances, worst gap {worst:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_12_nu_floor() {
    let g = WarpedMetric::round_sphere(3, 2.0, 64).unwrap();
    let r = sobolev_nu_bound(&g, &geometric_grid(1e-2, 1e2, 21), None).unwrap();
    let torus = HomogeneousMetric::new(vec![Factor::torus(3, 1.0)]).unwrap();
    let rejected = matches!(sobolev_nu_bound(&torus, &[1.0], None), Err(Error::Precondition(_)));
    let pass = r.pass && rejected;
    report(
        12,
        "entropy floor from the Sobolev constants",
        pass,
        format!("min margin {:.3}, constant {:.3}, torus rejected {rejected}", r.min_margin, r.constant),
    );
    assert!(pass);
}
