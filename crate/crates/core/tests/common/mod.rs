#![allow(dead_code)]

use std::collections::BTreeMap;

use randcontrol::action::{ActionSpace, FiniteActions};
use randcontrol::oracles::benchmark;
use randcontrol::problem::{ProblemSpec, ScalarCoefficients};

pub fn actions(marks: &[f64], weights: &[f64], a0: f64) -> FiniteActions {
    FiniteActions::new(ActionSpace::finite(marks.to_vec(), weights.to_vec(), a0).unwrap()).unwrap()
}

/// `{-1, +1}` with unit weights, so `lambda(A) = 2`.
pub fn two_actions() -> FiniteActions {
    actions(&[-1.0, 1.0], &[1.0, 1.0], -1.0)
}

/// `b = sigma = f = 0`, `g = c`.
pub fn constant_spec(c: f64) -> ProblemSpec {
    let coeffs = ScalarCoefficients::new(|_, _, _| 0.0, |_, _, _| 0.0, |_, _, _| 0.0, move |_| c).control_free();
    ProblemSpec::scalar("constant", coeffs, two_actions(), 1.0, 0.3).unwrap()
}

/// Control-free Brownian motion with `f = -x^2 / 2`, `g = x`.
pub fn diffusion_spec() -> ProblemSpec {
    let coeffs =
        ScalarCoefficients::new(|_, x, _| -0.5 * x, |_, _, _| 0.4, |_, x, _| -0.5 * x * x, |x| x).control_free();
    ProblemSpec::scalar("ou", coeffs, two_actions(), 1.0, 0.5).unwrap()
}

pub fn bench(name: &str, params: &[(&str, f64)]) -> ProblemSpec {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    benchmark(name, &p).unwrap().0
}

pub fn bangbang(x0: f64) -> ProblemSpec {
    bench("bangbang", &[("x0", x0)])
}

pub fn lqgrid() -> ProblemSpec {
    bench("lqgrid", &[])
}
