mod common;

use proptest::prelude::*;
use randcontrol::problem::{ProblemSpec, ScalarCoefficients};
use randcontrol::rng::{sample_brownian, split_stream, BrownianPath, TimeGrid};
use randcontrol::sde::{moment_check, simulate_controlled, ConstantControl, Control, StatePath};
use randcontrol::stats::Estimate;

use common::{bench, two_actions};

fn scalar(
    b: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    sigma: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    x0: f64,
) -> ProblemSpec {
    let c = ScalarCoefficients::new(b, sigma, |_, _, _| 0.0, |x| x);
    ProblemSpec::scalar("test", c, two_actions(), 1.0, x0).unwrap()
}

fn run(spec: &ProblemSpec, grid: &TimeGrid, action: usize, seed: u64, p: u64) -> StatePath {
    let w = sample_brownian(grid, 1, &mut split_stream(seed, p)).unwrap();
    simulate_controlled(spec, Control::Feedback(&ConstantControl(action)), &w).unwrap()
}

fn ensemble(spec: &ProblemSpec, grid: &TimeGrid, n: u64, seed: u64) -> Vec<StatePath> {
    (0..n).map(|p| run(spec, grid, 0, seed, p)).collect()
}

#[test]
fn frozen_dynamics_stay_put() {
    let spec = scalar(|_, _, _| 0.0, |_, _, _| 0.0, 0.7);
    let path = run(&spec, &TimeGrid::uniform(1.0, 25).unwrap(), 0, 0, 0);
    assert!(path.states.iter().all(|&x| x == 0.7));
}

#[test]
fn constant_drift_is_exact() {
    let spec = scalar(|_, _, a| a, |_, _, _| 0.0, 0.0);
    let path = run(&spec, &TimeGrid::uniform(1.0, 100).unwrap(), 1, 0, 0);
    assert!((path.terminal()[0] - 1.0).abs() < 1e-12);
    assert_eq!(path.control_trace, vec![1; 100]);
}

#[test]
fn geometric_mean_matches_moment() {
    let spec = bench("gbm_terminal", &[]);
    let grid = TimeGrid::uniform(1.0, 400).unwrap();
    let xs: Vec<f64> = (0..100_000).map(|p| run(&spec, &grid, 0, 1, p).terminal()[0]).collect();
    let e = Estimate::from_samples(&xs);
    let exact = 0.5f64.exp();
    assert!((e.mean - exact).abs() < 3.0 * e.se + 1e-3, "{e:?} vs {exact}");
}

#[test]
fn non_finite_coefficient_reports_location() {
    let spec = scalar(|_, x, _| x.ln(), |_, _, _| 0.0, -1.0);
    let w = sample_brownian(&TimeGrid::uniform(1.0, 10).unwrap(), 1, &mut split_stream(0, 0)).unwrap();
    let err = simulate_controlled(&spec, Control::Feedback(&ConstantControl(0)), &w).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("t=0") && msg.contains("x=[-1.0]") && msg.contains("a=-1"), "{msg}");
}

#[test]
fn degenerate_sup_moment_is_initial_power() {
    let spec = scalar(|_, _, _| 0.0, |_, _, _| 0.0, -1.5);
    let ens = ensemble(&spec, &TimeGrid::uniform(1.0, 10).unwrap(), 10, 0);
    let m = moment_check(&ens, 2.0).unwrap();
    assert_eq!(m.mean, 2.25);
}

#[test]
fn bounded_drift_moment_bound() {
    let spec = scalar(|t, x, _| (3.0 * t + x).sin(), |_, _, _| 0.0, 0.5);
    let ens = ensemble(&spec, &TimeGrid::uniform(1.0, 50).unwrap(), 10, 0);
    let m = moment_check(&ens, 3.0).unwrap();
    assert!(m.mean <= 1.5f64.powi(3) + 1e-12);
}

#[test]
fn geometric_moment_is_stable_in_path_count() {
    let spec = bench("gbm_terminal", &[]);
    let grid = TimeGrid::uniform(1.0, 50).unwrap();
    let small = moment_check(&ensemble(&spec, &grid, 10_000, 2), 2.0).unwrap();
    let large = moment_check(&ensemble(&spec, &grid, 100_000, 2), 2.0).unwrap();
    let ratio = large.mean / small.mean;
    assert!(small.mean.is_finite() && (0.9..=1.1).contains(&ratio), "{ratio}");
}

#[test]
fn low_moment_order_rejected() {
    let spec = scalar(|_, _, _| 0.0, |_, _, _| 0.0, 1.0);
    let ens = ensemble(&spec, &TimeGrid::uniform(1.0, 2).unwrap(), 2, 0);
    assert!(moment_check(&ens, 1.5).is_err());
}

/// Brownian path on a coarser grid obtained by summing `factor` fine increments.
fn coarsen(w: &BrownianPath, factor: usize) -> BrownianPath {
    let n = w.grid.n_steps() / factor;
    let increments = (0..n).map(|i| w.increments[i * factor..(i + 1) * factor].iter().sum()).collect();
    BrownianPath {
        grid: TimeGrid::uniform(w.grid.t_end(), n).unwrap(),
        dim: 1,
        increments,
    }
}

#[test]
fn halving_step_reduces_strong_error() {
    let spec = bench("gbm_terminal", &[("sigma", 0.8)]);
    let base_steps = 16;
    let reference = TimeGrid::uniform(1.0, base_steps * 8).unwrap();
    let (mut e_coarse, mut e_fine) = (0.0, 0.0);
    let n = 20_000;
    for p in 0..n {
        let w = sample_brownian(&reference, 1, &mut split_stream(3, p)).unwrap();
        let ctl = ConstantControl(0);
        let xr = simulate_controlled(&spec, Control::Feedback(&ctl), &w).unwrap().terminal()[0];
        let xf = simulate_controlled(&spec, Control::Feedback(&ctl), &coarsen(&w, 4)).unwrap().terminal()[0];
        let xc = simulate_controlled(&spec, Control::Feedback(&ctl), &coarsen(&w, 8)).unwrap().terminal()[0];
        e_coarse += (xc - xr).powi(2);
        e_fine += (xf - xr).powi(2);
    }
    let factor = (e_coarse / e_fine).sqrt();
    assert!((1.2..=3.0).contains(&factor), "reduction factor {factor}");
}

proptest! {
    #[test]
    fn path_shape_matches_grid(n in 1usize..60, x0 in -3.0f64..3.0, seed in any::<u64>()) {
        let spec = scalar(|_, x, a| a - x, |_, _, _| 0.3, x0);
        let grid = TimeGrid::uniform(1.0, n).unwrap();
        let path = run(&spec, &grid, 1, seed, 0);
        prop_assert_eq!(path.states.len(), n + 1);
        prop_assert_eq!(path.control_trace.len(), n);
        prop_assert_eq!(path.state(0)[0], x0);
    }
}
