//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use randcontrol::approx::{approximation_ensemble, PiecewiseControl};
use randcontrol::bsde::{
    dpp_residual, extract_epsilon_optimal_intensity, solve_constrained, solve_penalized, RegressionBasis,
    DEFAULT_SCHEDULE,
};
use randcontrol::campaign::{run_brute, run_campaign, run_randomized};
use randcontrol::config::validate_config;
use randcontrol::intensity::{battery, ConstantIntensity, FnIntensity, IntensityField, SignFeedbackFamily};
use randcontrol::oracles::{bangbang_closed_form, linear_expectation_oracle};
use randcontrol::point_process::{
    compensator_residual, girsanov_weight, time_change_sequence, GridTrace, JumpControlPath, MarkedPointPath,
    PoissonSampler, TestField, Weighting,
};
use randcontrol::randomized::{randomized_gain_reweighted, Estimator, OptimizeConfig};
use randcontrol::rng::{path_stream, Purpose, TimeGrid};
use randcontrol::stats::{ks_test, Estimate};

use common::{actions, bangbang, bench, constant_spec, lqgrid, two_actions};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit_grid(n: usize) -> TimeGrid {
    TimeGrid::uniform(1.0, n).unwrap()
}

fn kappa(path: &MarkedPointPath, nu: &dyn IntensityField, grid: &TimeGrid) -> f64 {
    let acts = two_actions();
    let trace = JumpControlPath::new(path.clone(), acts.a0_index()).grid_trace(grid);
    let gt = GridTrace {
        dim: 0,
        states: &[],
        actions: &trace,
    };
    girsanov_weight(path, nu, &acts, grid, &gt, path.horizon).unwrap()
}

fn base_paths(n: u64, seed: u64, horizon: f64) -> Vec<MarkedPointPath> {
    let sampler = PoissonSampler::new(&two_actions()).unwrap();
    (0..n)
        .map(|p| sampler.sample(horizon, &mut path_stream(seed, p, Purpose::Poisson)).unwrap())
        .collect()
}

fn girsanov_martingale() -> Outcome {
    let grid = unit_grid(100);
    let paths = base_paths(100_000, 101, 1.0);
    let mut lines = Vec::new();
    let mut ok = true;
    for nu in battery(2) {
        let ks: Vec<f64> = paths.iter().map(|p| kappa(p, nu.as_ref(), &grid)).collect();
        let e = Estimate::from_samples(&ks);
        ok &= e.within(1.0, 3.0);
        lines.push(format!("{}={:.4}±{:.4}", nu.name(), e.mean, e.se));
    }
    check(ok, lines.join(" "))
}

/// Twenty bounded functionals of the first three events.
fn event_features(p: &MarkedPointPath) -> [f64; 20] {
    let mut f = [0.0; 20];
    for k in 0..3 {
        if let (Some(&t), Some(&m)) = (p.times.get(k), p.marks.get(k)) {
            f[5 * k] = 1.0;
            f[5 * k + 1] = 1.0 - t;
            f[5 * k + 2] = if m == 0 { 1.0 } else { 0.0 };
            f[5 * k + 3] = (3.0 * t).cos();
            f[5 * k + 4] = t * m as f64;
        }
    }
    f[15] = p.len().min(3) as f64 / 3.0;
    f[16] = if p.is_empty() { 1.0 } else { 0.0 };
    if p.len() >= 2 {
        f[17] = if p.marks[0] == p.marks[1] { 1.0 } else { 0.0 };
        f[18] = p.times[1] - p.times[0];
    }
    if let Some(&t) = p.times.first() {
        f[19] = (-t).exp() * p.marks[0] as f64;
    }
    f
}

fn time_change_law() -> Outcome {
    let acts = two_actions();
    let sampler = PoissonSampler::new(&acts).unwrap();
    let grid = unit_grid(50);
    let nu = battery(2)[1].clone();
    let (_, hi) = nu.bounds();
    let n = 60_000u64;
    let changed: Vec<[f64; 20]> = (0..n)
        .map(|p| {
            let base = sampler.sample(hi, &mut path_stream(201, p, Purpose::Poisson)).unwrap();
            event_features(&time_change_sequence(&base, sampler.lifted(), &acts, nu.as_ref(), &grid).unwrap())
        })
        .collect();
    let weighted: Vec<[f64; 20]> = base_paths(n, 202, 1.0)
        .iter()
        .map(|p| {
            let w = kappa(p, nu.as_ref(), &grid);
            event_features(p).map(|v| w * v)
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut failed = Vec::new();
    for j in 0..20 {
        let a = Estimate::from_samples(&changed.iter().map(|f| f[j]).collect::<Vec<_>>());
        let b = Estimate::from_samples(&weighted.iter().map(|f| f[j]).collect::<Vec<_>>());
        let z = (a.mean - b.mean).abs() / a.combined_se(&b).max(1e-300);
        worst = worst.max(z);
        if z >= 3.0 {
            failed.push(j);
        }
    }
    check(failed.is_empty(), format!("{} functionals, worst |z|={worst:.2}, failing {failed:?}", 20))
}

fn watanabe() -> Outcome {
    let acts = two_actions();
    let sampler = PoissonSampler::new(&acts).unwrap();
    let long = sampler.sample(5300.0, &mut path_stream(301, 0, Purpose::Poisson)).unwrap();
    let mut prev = 0.0;
    let gaps: Vec<f64> = long
        .times
        .iter()
        .take(10_000)
        .map(|&t| {
            let g = t - prev;
            prev = t;
            g
        })
        .collect();
    if gaps.len() < 10_000 {
        return Err(format!("only {} events", gaps.len()));
    }
    let rate = acts.total_mass();
    let (d, p) = ks_test(&gaps, |x| 1.0 - (-rate * x).exp());
    let c = 2.5;
    let grid = unit_grid(20);
    let counts: Vec<f64> = (0..100_000u64)
        .map(|r| {
            let base = sampler.sample(c, &mut path_stream(302, r, Purpose::Poisson)).unwrap();
            time_change_sequence(&base, sampler.lifted(), &acts, &ConstantIntensity(c), &grid).unwrap().len() as f64
        })
        .collect();
    let e = Estimate::from_samples(&counts);
    let expected = c * rate;
    check(
        p > 0.01 && e.within(expected, 3.0),
        format!("KS D={d:.4} p={p:.3}; count {:.4}±{:.4} vs {expected}", e.mean, e.se),
    )
}

fn smoothing_formula() -> Outcome {
    let grid = unit_grid(50);
    let acts = two_actions();
    let ens = base_paths(50_000, 401, 1.0);
    let sine = FnIntensity::new("sine_time", 0.5, 1.5, |t, _x, _i, a| {
        1.0 + 0.5 * t.sin() * if a == 0 { 1.0 } else { 0.0 }
    });
    let fields: Vec<(&str, Box<dyn TestField>)> = vec![
        ("one", Box::new(|_t: f64, _ts: &[f64], _ms: &[usize], _a: usize| 1.0)),
        ("time", Box::new(|t: f64, _ts: &[f64], _ms: &[usize], _a: usize| t)),
        ("first_mark", Box::new(|_t: f64, _ts: &[f64], _ms: &[usize], a: usize| (a == 0) as u8 as f64)),
        ("time_second_mark", Box::new(|t: f64, _ts: &[f64], _ms: &[usize], a: usize| t * a as f64)),
        ("past_count", Box::new(|_t: f64, ts: &[f64], _ms: &[usize], _a: usize| ts.len().min(5) as f64)),
        (
            "repeat_mark",
            Box::new(|_t: f64, _ts: &[f64], ms: &[usize], a: usize| (ms.last() == Some(&a)) as u8 as f64),
        ),
        (
            "since_last",
            Box::new(|t: f64, ts: &[f64], _ms: &[usize], _a: usize| (-(t - ts.last().copied().unwrap_or(0.0))).exp()),
        ),
        ("wave", Box::new(|t: f64, _ts: &[f64], _ms: &[usize], a: usize| (2.0 * PI * t).sin() * (a as f64 + 1.0))),
        ("even_count", Box::new(|_t: f64, ts: &[f64], _ms: &[usize], _a: usize| ts.len().is_multiple_of(2) as u8 as f64)),
        (
            "capped_count_time",
            Box::new(|t: f64, ts: &[f64], _ms: &[usize], a: usize| ts.len().min(2) as f64 * t * (a == 0) as u8 as f64),
        ),
    ];
    let mut failed = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, h) in &fields {
        for (nu, w) in [
            (&ConstantIntensity(1.0) as &dyn IntensityField, Weighting::Unweighted),
            (&sine as &dyn IntensityField, Weighting::Girsanov),
        ] {
            let c = compensator_residual(&ens, nu, h.as_ref(), &acts, &grid, w).unwrap();
            let z = c.residual.abs() / c.se.max(1e-300);
            worst = worst.max(z);
            if z >= 3.0 {
                failed.push(format!("{name}/{w:?}"));
            }
        }
    }
    check(failed.is_empty(), format!("20 residuals, worst |z|={worst:.2}, failing {failed:?}"))
}

fn appendix_construction() -> Outcome {
    let acts = actions(&[-1.0, 0.0, 1.0], &[1.0, 1.0, 1.0], -1.0);
    let alpha = PiecewiseControl::new(vec![0.0, 0.3, 0.6, 1.0], vec![0, 2, 1]).unwrap();
    let mut prev: Option<Estimate> = None;
    let mut ok = true;
    let mut lines = Vec::new();
    for mk in [2u32, 4, 8, 16] {
        let s = approximation_ensemble(&alpha, &acts, mk, mk, 20_000, 501).unwrap();
        if let Some(p) = prev {
            ok &= s.distance.mean < p.mean;
        }
        let bound = 2.0 / mk as f64;
        ok &= s.lag_distance.mean <= bound + 3.0 * s.lag_distance.se;
        lines.push(format!(
            "m=k={mk}: rho={:.4} lag={:.4}<= {bound:.3}",
            s.distance.mean, s.lag_distance.mean
        ));
        prev = Some(s.distance);
    }
    check(ok, lines.join("; "))
}

fn bangbang_triangle() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut lines = Vec::new();
    for x0 in [0.0, 0.5, 2.0] {
        let cfg = validate_config(&format!(
            r#"{{"benchmark": {{"name": "bangbang", "params": {{"x0": {x0}}}}}, "n_paths": 100000, "n_steps": 100}}"#
        ))
        .unwrap();
        let (spec, _) = cfg.problem().unwrap();
        let grid = cfg.grid(&spec).unwrap();
        let oracle = bangbang_closed_form(x0, 0.0, 1.0);
        let (brute, _) = run_brute(&cfg, &spec, &grid).unwrap();
        let (rand, _) = run_randomized(&cfg, &spec, &grid).unwrap();
        let sol = solve_penalized(&spec, 64.0, &grid, cfg.basis(), cfg.n_paths, cfg.bsde_seed()).unwrap();
        let (eb, er, ey) = (
            (brute.value.mean - oracle).abs(),
            (rand.gain.estimate.mean - oracle).abs(),
            (sol.y0.mean - oracle).abs(),
        );
        ok &= eb <= 0.05 && er <= 0.1 && ey <= 0.1;
        lines.push(format!(
            "x0={x0}: brute {:.4} randomized {:.4} Y0 {:.4} oracle {oracle}",
            brute.value.mean, rand.gain.estimate.mean, sol.y0.mean
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 600.0;
    lines.push(format!("{secs:.0}s"));
    check(ok, lines.join("; "))
}

fn lq_triangle() -> Outcome {
    let raw = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/lqgrid.json")).unwrap();
    let cfg = validate_config(&raw).unwrap();
    let report = run_campaign(&cfg, None, false).unwrap();
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{} {:.4} (err {:.4} <= {:.4})", r.stage, r.estimate, r.error, r.allowed))
        .collect();
    check(report.pass, format!("oracle {:.5}; {}", report.oracle.value, rows.join("; ")))
}

fn penalized_structure() -> Outcome {
    let spec = bangbang(0.5);
    let grid = unit_grid(100);
    let (sol, report) =
        solve_constrained(&spec, &DEFAULT_SCHEDULE, Some(0.0), &grid, RegressionBasis { degree: 5 }, 20_000, 801)
            .unwrap();
    let mut ok = report.rows.len() == DEFAULT_SCHEDULE.len();
    for w in report.rows.windows(2) {
        ok &= w[1].y0.mean >= w[0].y0.mean - 2.0 * w[1].y0.se;
        ok &= w[1].g_n.mean <= w[0].g_n.mean + 2.0 * w[0].g_n.se;
    }
    let (g1, g64) = (report.rows[0].g_n.mean, report.rows.last().unwrap().g_n.mean);
    ok &= g64 <= g1 / 4.0;
    let n = grid.n_steps();
    for x in [-1.3, -0.2, 0.0, 0.7, 2.4] {
        for c in 0..2 {
            ok &= sol.value(n, &[x], c) == -f64::abs(x);
        }
    }
    let k_monotone = (0..sol.n_paths).all(|p| sol.k_path(p).windows(2).all(|w| w[1] >= w[0]));
    ok &= k_monotone;
    let y: Vec<String> = report.rows.iter().map(|r| format!("{:.4}", r.y0.mean)).collect();
    let g: Vec<String> = report.rows.iter().map(|r| format!("{:.4}", r.g_n.mean)).collect();
    check(ok, format!("Y0 [{}] G [{}] K monotone {k_monotone}", y.join(", "), g.join(", ")))
}

fn linear_sanity() -> Outcome {
    let spec = bench("gbm_terminal", &[]);
    let grid = unit_grid(100);
    let sol = solve_penalized(&spec, 0.0, &grid, RegressionBasis { degree: 3 }, 50_000, 901).unwrap();
    let oracle = linear_expectation_oracle(&spec, &grid, 50_000, 902).unwrap();
    let close = (sol.y0.mean - oracle.mean).abs() <= 3.0 * sol.y0.combined_se(&oracle);
    let constant = solve_penalized(&constant_spec(0.8), 16.0, &unit_grid(20), RegressionBasis { degree: 3 }, 2000, 903)
        .unwrap();
    let exact = constant.y0.mean == 0.8 && constant.k.iter().all(|&k| k == 0.0);
    check(
        close && exact,
        format!("Y0 {:.5} vs oracle {:.5}±{:.5}; constant spec exact {exact}", sol.y0.mean, oracle.mean, oracle.se),
    )
}

fn epsilon_extraction() -> Outcome {
    let spec = lqgrid();
    let grid = unit_grid(50);
    let eps = 1e-2;
    let sol = Arc::new(solve_penalized(&spec, 4.0, &grid, RegressionBasis { degree: 3 }, 20_000, 1001).unwrap());
    let nu = extract_epsilon_optimal_intensity(sol.clone(), eps).unwrap();
    let g = randomized_gain_reweighted(&spec, &grid, &nu, 50_000, 1002).unwrap();
    let slack = eps * spec.horizon * spec.actions.total_mass();
    let floor = sol.y0.mean - slack - 3.0 * sol.y0.combined_se(&g.estimate);
    check(
        g.estimate.mean >= floor,
        format!("gain {:.4}±{:.4} >= {floor:.4} (Y0 {:.4})", g.estimate.mean, g.estimate.se, sol.y0.mean),
    )
}

fn dpp_residuals() -> Outcome {
    let spec = bangbang(0.5);
    let grid = unit_grid(100);
    let sol = solve_penalized(&spec, 64.0, &grid, RegressionBasis { degree: 5 }, 20_000, 1101).unwrap();
    let family = SignFeedbackFamily::new(&spec.actions, 0.01, 20.0, 6).unwrap();
    let cfg = OptimizeConfig::new(40, 20_000, 1102, Estimator::Direct);
    let mut ok = true;
    let mut lines = Vec::new();
    for tau in [0, 50, 100] {
        let r = dpp_residual(&sol, &family, tau, &cfg).unwrap();
        ok &= r.residual >= -3.0 * r.se && r.residual.abs() <= 0.1;
        lines.push(format!("tau={}: {:.4}±{:.4}", grid.time(tau), r.residual, r.se));
    }
    check(ok, lines.join("; "))
}

fn reproducibility() -> Outcome {
    let cfg = validate_config(r#"{"benchmark": {"name": "bangbang", "params": {"x0": 2.0}}, "n_paths": 1000, "n_steps": 20, "budget": 8}"#)
        .unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_campaign(&cfg, Some(d.path()), false).unwrap();
    }
    let mut same = true;
    let files = ["oracle.csv", "brute.csv", "randomized.csv", "bsde.csv", "campaign.csv", "summary.json"];
    for f in files {
        same &= fs::read(dirs[0].path().join(f)).unwrap() == fs::read(dirs[1].path().join(f)).unwrap();
    }
    check(same, format!("{} files compared", files.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("girsanov_martingale", girsanov_martingale),
        ("time_change_law", time_change_law),
        ("watanabe", watanabe),
        ("smoothing_formula", smoothing_formula),
        ("appendix_construction", appendix_construction),
        ("bangbang_triangle", bangbang_triangle),
        ("lq_triangle", lq_triangle),
        ("penalized_structure", penalized_structure),
        ("linear_sanity", linear_sanity),
        ("epsilon_extraction", epsilon_extraction),
        ("dpp_residuals", dpp_residuals),
        ("reproducibility", reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:2} {name} [{secs:.1}s] {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {:2} {name} [{secs:.1}s] {detail}", i + 1);
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
