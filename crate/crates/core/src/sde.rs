//! Euler-Maruyama simulation of the controlled and randomized state equations.

use crate::error::{Error, Result};
use crate::point_process::JumpControlPath;
use crate::problem::ProblemSpec;
use crate::rng::{BrownianPath, TimeGrid};
use crate::stats::Estimate;

/// Markovian feedback control returning an action index.
pub trait FeedbackControl: Sync {
    fn action(&self, t: f64, x: &[f64]) -> usize;
}

impl<F> FeedbackControl for F
where
    F: Fn(f64, &[f64]) -> usize + Sync,
{
    fn action(&self, t: f64, x: &[f64]) -> usize {
        self(t, x)
    }
}

/// Constant control.
#[derive(Debug, Clone, Copy)]
pub struct ConstantControl(pub usize);

impl FeedbackControl for ConstantControl {
    fn action(&self, _t: f64, _x: &[f64]) -> usize {
        self.0
    }
}

pub enum Control<'a> {
    Feedback(&'a dyn FeedbackControl),
    Jump(&'a JumpControlPath),
}

#[derive(Debug, Clone)]
pub struct StatePath {
    pub grid: TimeGrid,
    pub dim: usize,
    /// `X_{t_0}, ..., X_{t_N}` flattened.
    pub states: Vec<f64>,
    /// Action index used on each interval.
    pub control_trace: Vec<usize>,
}

impl StatePath {
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.n_steps())
    }
}

/// Reusable buffers for one Euler step.
pub struct EulerStepper<'a> {
    spec: &'a ProblemSpec,
    b: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> EulerStepper<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Self {
        EulerStepper {
            spec,
            b: vec![0.0; spec.dim_x],
            sigma: vec![0.0; spec.dim_x * spec.dim_w],
        }
    }

    /// `x + b(t,x,a) dt + sigma(t,x,a) dw`, written into `out`.
    pub fn step(&mut self, t: f64, x: &[f64], a: usize, dt: f64, dw: &[f64], out: &mut [f64]) -> Result<()> {
        let av = self.spec.mark_value(a);
        self.spec.coeffs.drift(t, x, av, &mut self.b);
        self.spec.coeffs.diffusion(t, x, av, &mut self.sigma);
        let d = self.spec.dim_w;
        for k in 0..self.spec.dim_x {
            let mut v = x[k] + self.b[k] * dt;
            for (s, w) in self.sigma[k * d..(k + 1) * d].iter().zip(dw) {
                v += s * w;
            }
            out[k] = v;
        }
        if self.b.iter().chain(&self.sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoefficient {
                what: "b or sigma",
                t,
                x: x.to_vec(),
                a: av,
            });
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoefficient {
                what: "state",
                t,
                x: x.to_vec(),
                a: av,
            });
        }
        Ok(())
    }

    pub fn running(&self, t: f64, x: &[f64], a: usize) -> Result<f64> {
        let av = self.spec.mark_value(a);
        let v = self.spec.coeffs.running(t, x, av);
        if !v.is_finite() {
            return Err(Error::NonFiniteCoefficient {
                what: "f",
                t,
                x: x.to_vec(),
                a: av,
            });
        }
        Ok(v)
    }

    pub fn terminal(&self, x: &[f64]) -> Result<f64> {
        let v = self.spec.coeffs.terminal(x);
        if !v.is_finite() {
            return Err(Error::NonFiniteCoefficient {
                what: "g",
                t: self.spec.horizon,
                x: x.to_vec(),
                a: f64::NAN,
            });
        }
        Ok(v)
    }
}

/// Explicit Euler recursion along `w.grid`. Jump controls use the left-limit
/// convention: a jump inside `(t_i, t_{i+1}]` acts from `t_{i+1}` on.
pub fn simulate_controlled(spec: &ProblemSpec, control: Control<'_>, w: &BrownianPath) -> Result<StatePath> {
    if w.dim != spec.dim_w {
        return Err(Error::invalid("w", format!("Brownian dimension {} != {}", w.dim, spec.dim_w)));
    }
    let grid = &w.grid;
    let n = spec.dim_x;
    let dt = grid.dt();
    let jump_trace = match &control {
        Control::Jump(j) => Some(j.grid_trace(grid)),
        Control::Feedback(_) => None,
    };
    let mut stepper = EulerStepper::new(spec);
    let mut states = Vec::with_capacity((grid.n_steps() + 1) * n);
    states.extend_from_slice(&spec.x0);
    let mut trace = Vec::with_capacity(grid.n_steps());
    let mut next = vec![0.0; n];
    for i in 0..grid.n_steps() {
        let t = grid.time(i);
        let x = &states[i * n..(i + 1) * n];
        let a = match (&control, &jump_trace) {
            (_, Some(tr)) => tr[i],
            (Control::Feedback(c), None) => c.action(t, x),
            _ => unreachable!(),
        };
        if a >= spec.actions.len() {
            return Err(Error::invalid("control", format!("action index {a} out of range")));
        }
        stepper.step(t, x, a, dt, w.increment(i), &mut next)?;
        trace.push(a);
        states.extend_from_slice(&next);
    }
    Ok(StatePath {
        grid: grid.clone(),
        dim: n,
        states,
        control_trace: trace,
    })
}

/// `sum_i f(t_i, X_i, a_i) dt + g(X_T)` along a simulated path.
pub fn path_functional(spec: &ProblemSpec, path: &StatePath) -> Result<f64> {
    let stepper = EulerStepper::new(spec);
    let dt = path.grid.dt();
    let mut acc = 0.0;
    for i in 0..path.grid.n_steps() {
        acc += stepper.running(path.grid.time(i), path.state(i), path.control_trace[i])? * dt;
    }
    Ok(acc + stepper.terminal(path.terminal())?)
}

/// Monte-Carlo estimate of `E[sup_t |X_t|^p]`.
pub fn moment_check(ensemble: &[StatePath], p: f64) -> Result<Estimate> {
    if !(p >= 2.0) {
        return Err(Error::invalid("p", format!("moment order {p} must be at least 2")));
    }
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let sups: Vec<f64> = ensemble
        .iter()
        .map(|path| {
            (0..=path.grid.n_steps())
                .map(|i| path.state(i).iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(Estimate::from_samples(&sups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{ActionSpace, FiniteActions};
    use crate::problem::ScalarCoefficients;
    use crate::rng::{sample_brownian, split_stream};

    fn acts() -> FiniteActions {
        FiniteActions::new(ActionSpace::finite(vec![-1.0, 1.0], vec![1.0, 1.0], -1.0).unwrap()).unwrap()
    }

    #[test]
    fn unit_drift_is_exact() {
        let c = ScalarCoefficients::new(|_, _, a| a, |_, _, _| 0.0, |_, _, _| 0.0, |x| -x.abs());
        let spec = ProblemSpec::scalar("t", c, acts(), 1.0, 0.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let w = sample_brownian(&grid, 1, &mut split_stream(0, 0)).unwrap();
        let p = simulate_controlled(&spec, Control::Feedback(&ConstantControl(1)), &w).unwrap();
        assert!((p.terminal()[0] - 1.0).abs() < 1e-12);
        assert!((path_functional(&spec, &p).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn nan_coefficient_reports_location() {
        let c = ScalarCoefficients::new(|t, _, _| if t > 0.5 { f64::NAN } else { 0.0 }, |_, _, _| 0.0, |_, _, _| 0.0, |_| 0.0);
        let spec = ProblemSpec::scalar("t", c, acts(), 1.0, 0.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let w = sample_brownian(&grid, 1, &mut split_stream(0, 0)).unwrap();
        let err = simulate_controlled(&spec, Control::Feedback(&ConstantControl(0)), &w).unwrap_err();
        assert!(matches!(err, Error::NonFiniteCoefficient { t, .. } if t > 0.5));
    }

    #[test]
    fn moment_order_below_two_rejected() {
        assert!(moment_check(&[], 1.5).is_err());
        assert!(matches!(moment_check(&[], 2.0), Err(Error::EmptyEnsemble)));
    }
}
