//! Reference solutions: a closed form, an explicit upwind HJB scheme and plain
//! Monte Carlo for control-free problems, plus the registry of benchmarks.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::action::{ActionSpace, FiniteActions};
use crate::control::gain;
use crate::error::{Error, Result};
use crate::problem::{ProblemSpec, ScalarCoefficients};
use crate::rng::TimeGrid;
use crate::sde::{ConstantControl, FeedbackControl};
use crate::stats::Estimate;

/// `-max(|x0| - (T - t), 0)`: value of steering `dx = a dt`, `a in {-1, 1}`,
/// toward the origin with terminal reward `-|x|`.
pub fn bangbang_closed_form(x0: f64, t: f64, horizon: f64) -> f64 {
    0.0 - (x0.abs() - (horizon - t)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub nt: usize,
}

impl FdGrid {
    pub fn dx(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nx - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_lo + j as f64 * self.dx()
    }

    /// Grid with the smallest `nt` satisfying the monotonicity condition with a
    /// 5% margin.
    pub fn stable(spec: &ProblemSpec, x_lo: f64, x_hi: f64, nx: usize, actions: &[usize]) -> Result<Self> {
        let mut g = FdGrid { x_lo, x_hi, nx, nt: 1 };
        let rate = max_rate(spec, &g, actions, spec.horizon)?;
        g.nt = ((spec.horizon * rate / 0.95).ceil() as usize).max(1);
        Ok(g)
    }
}

fn max_rate(spec: &ProblemSpec, g: &FdGrid, actions: &[usize], horizon: f64) -> Result<f64> {
    if g.nx < 3 || !(g.x_hi > g.x_lo) {
        return Err(Error::invalid("fd_grid", "need nx >= 3 and x_lo < x_hi"));
    }
    let dx = g.dx();
    let probes = 8;
    let mut rate: f64 = 0.0;
    let mut b = [0.0];
    let mut s = [0.0];
    for k in 0..=probes {
        let t = horizon * k as f64 / probes as f64;
        for j in 0..g.nx {
            let x = [g.x(j)];
            for &a in actions {
                let av = spec.mark_value(a);
                spec.coeffs.drift(t, &x, av, &mut b);
                spec.coeffs.diffusion(t, &x, av, &mut s);
                rate = rate.max(s[0] * s[0] / (dx * dx) + b[0].abs() / dx);
            }
        }
    }
    Ok(rate)
}

/// `v(t_k, x_j)` on the finite-difference grid.
#[derive(Debug, Clone, Serialize)]
pub struct ValueSurface {
    pub ts: Vec<f64>,
    pub xs: Vec<f64>,
    /// `values[k * nx + j]`.
    pub values: Vec<f64>,
}

impl ValueSurface {
    pub fn row(&self, k: usize) -> &[f64] {
        let nx = self.xs.len();
        &self.values[k * nx..(k + 1) * nx]
    }

    /// Linear interpolation in `x` at time index `k`.
    pub fn interpolate(&self, k: usize, x: f64) -> f64 {
        let xs = &self.xs;
        let row = self.row(k);
        if x <= xs[0] {
            return row[0];
        }
        if x >= xs[xs.len() - 1] {
            return row[xs.len() - 1];
        }
        let j = xs.partition_point(|&v| v <= x);
        let w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
        row[j - 1] * (1.0 - w) + row[j] * w
    }

    pub fn initial_value(&self, x: f64) -> f64 {
        self.interpolate(0, x)
    }
}

enum FdActions<'a> {
    Sup(&'a [usize]),
    Policy(&'a dyn FeedbackControl),
}

fn fd_solve(spec: &ProblemSpec, grid: &FdGrid, which: FdActions<'_>) -> Result<ValueSurface> {
    if spec.dim_x != 1 || spec.dim_w != 1 {
        return Err(Error::invalid("spec", "finite differences need a scalar state and noise"));
    }
    let all: Vec<usize> = (0..spec.actions.len()).collect();
    let probe_actions: &[usize] = match &which {
        FdActions::Sup(a) => a,
        FdActions::Policy(_) => &all,
    };
    if probe_actions.is_empty() {
        return Err(Error::invalid("action_grid", "empty"));
    }
    let rate = max_rate(spec, grid, probe_actions, spec.horizon)?;
    let dt = spec.horizon / grid.nt as f64;
    if dt * rate > 1.0 {
        return Err(Error::Unstable {
            required_nt: (spec.horizon * rate).ceil() as usize,
            nt: grid.nt,
        });
    }
    let nx = grid.nx;
    let dx = grid.dx();
    let xs: Vec<f64> = (0..nx).map(|j| grid.x(j)).collect();
    let ts: Vec<f64> = (0..=grid.nt).map(|k| k as f64 * dt).collect();
    let mut values = vec![0.0; (grid.nt + 1) * nx];
    for j in 0..nx {
        values[grid.nt * nx + j] = spec.coeffs.terminal(&[xs[j]]);
    }
    let mut b = [0.0];
    let mut s = [0.0];
    for k in (0..grid.nt).rev() {
        let t = ts[k];
        let (head, tail) = values.split_at_mut((k + 1) * nx);
        let next = &tail[..nx];
        let cur = &mut head[k * nx..];
        cur[0] = spec.coeffs.terminal(&[xs[0]]);
        cur[nx - 1] = spec.coeffs.terminal(&[xs[nx - 1]]);
        for j in 1..nx - 1 {
            let x = [xs[j]];
            let mut best = f64::NEG_INFINITY;
            let mut consider = |a: usize| {
                let av = spec.mark_value(a);
                spec.coeffs.drift(t, &x, av, &mut b);
                spec.coeffs.diffusion(t, &x, av, &mut s);
                let fwd = (next[j + 1] - next[j]) / dx;
                let bwd = (next[j] - next[j - 1]) / dx;
                let lap = (next[j + 1] - 2.0 * next[j] + next[j - 1]) / (dx * dx);
                let gen = b[0].max(0.0) * fwd + b[0].min(0.0) * bwd + 0.5 * s[0] * s[0] * lap
                    + spec.coeffs.running(t, &x, av);
                if gen > best {
                    best = gen;
                }
            };
            match &which {
                FdActions::Sup(acts) => acts.iter().for_each(|&a| consider(a)),
                FdActions::Policy(p) => consider(p.action(t, &x)),
            }
            cur[j] = next[j] + dt * best;
            if !cur[j].is_finite() {
                return Err(Error::NonFiniteCoefficient {
                    what: "fd value",
                    t,
                    x: x.to_vec(),
                    a: f64::NAN,
                });
            }
        }
    }
    Ok(ValueSurface { ts, xs, values })
}

/// Explicit upwind scheme for `-v_t = sup_a [b v_x + sigma^2 v_xx / 2 + f]`,
/// `v(T) = g`, with `v = g` at both spatial boundaries.
pub fn hjb_fd_solve(spec: &ProblemSpec, grid: &FdGrid, action_grid: &[usize]) -> Result<ValueSurface> {
    fd_solve(spec, grid, FdActions::Sup(action_grid))
}

/// The same scheme with the action fixed by a feedback policy.
pub fn fd_policy_value(spec: &ProblemSpec, grid: &FdGrid, policy: &dyn FeedbackControl) -> Result<ValueSurface> {
    fd_solve(spec, grid, FdActions::Policy(policy))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FdValue {
    pub value: f64,
    /// `|v(nx) - v(nx / 2)|` at `x0`.
    pub grid_error: f64,
}

/// HJB value at `x0` with a grid-error estimate from halving the resolution.
pub fn fd_value_with_error(spec: &ProblemSpec, x_lo: f64, x_hi: f64, nx: usize, actions: &[usize]) -> Result<FdValue> {
    let fine = FdGrid::stable(spec, x_lo, x_hi, nx, actions)?;
    let coarse = FdGrid::stable(spec, x_lo, x_hi, nx.div_ceil(2), actions)?;
    let x0 = spec.x0[0];
    let vf = hjb_fd_solve(spec, &fine, actions)?.initial_value(x0);
    let vc = hjb_fd_solve(spec, &coarse, actions)?.initial_value(x0);
    Ok(FdValue {
        value: vf,
        grid_error: (vf - vc).abs(),
    })
}

/// `E[g(X_T) + int f dt]` for coefficients that ignore the action.
pub fn linear_expectation_oracle(spec: &ProblemSpec, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<Estimate> {
    if !spec.coeffs.control_independent() {
        return Err(Error::invalid("spec", "linear oracle needs action-independent coefficients"));
    }
    gain(spec, grid, &ConstantControl(spec.actions.a0_index()), n_paths, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    ClosedForm,
    FdPde,
    LinearExpectation,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    pub oracle_kind: OracleKind,
}

pub const BENCHMARKS: [&str; 3] = ["bangbang", "lqgrid", "gbm_terminal"];

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn check_params(name: &str, params: &BTreeMap<String, f64>, allowed: &[&str]) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::config(
                format!("benchmark.params.{k}"),
                format!("unknown parameter for {name}; expected one of {allowed:?}"),
            ));
        }
    }
    Ok(())
}

/// Registered benchmark by name.
///
/// * `bangbang`: `b = a`, `sigma = 0`, `f = 0`, `g = -|x|`, `A = {-1, 1}`.
/// * `lqgrid`: `b = a`, `sigma` constant, `f = -(x^2 + c a^2)`, `g = -x^2`, `A = {-1, 0, 1}`.
/// * `gbm_terminal`: `b = mu x`, `sigma = s x`, `f = 0`, `g = x`, a single action.
pub fn benchmark(name: &str, params: &BTreeMap<String, f64>) -> Result<(ProblemSpec, BenchmarkSpec)> {
    let horizon = param(params, "horizon", 1.0);
    let (spec, kind) = match name {
        "bangbang" => {
            check_params(name, params, &["x0", "horizon"])?;
            let acts = FiniteActions::new(ActionSpace::finite(vec![-1.0, 1.0], vec![1.0, 1.0], -1.0)?)?;
            let c = ScalarCoefficients::new(|_, _, a| a, |_, _, _| 0.0, |_, _, _| 0.0, |x| -x.abs());
            let spec = ProblemSpec::scalar(name, c, acts, horizon, param(params, "x0", 0.5))?.with_constants(1.0, 1.0);
            (spec, OracleKind::ClosedForm)
        }
        "lqgrid" => {
            check_params(name, params, &["x0", "horizon", "sigma", "action_cost"])?;
            let sigma = param(params, "sigma", 0.5);
            let cost = param(params, "action_cost", 0.5);
            let w = 2.0 / 3.0;
            let acts = FiniteActions::new(ActionSpace::finite(vec![-1.0, 0.0, 1.0], vec![w, w, w], -1.0)?)?;
            let c = ScalarCoefficients::new(
                |_, _, a| a,
                move |_, _, _| sigma,
                move |_, x, a| -(x * x + cost * a * a),
                |x| -x * x,
            );
            let spec = ProblemSpec::scalar(name, c, acts, horizon, param(params, "x0", 1.0))?
                .with_constants(1.0f64.max(cost + 0.5), 2.0);
            (spec, OracleKind::FdPde)
        }
        "gbm_terminal" => {
            check_params(name, params, &["x0", "horizon", "mu", "sigma"])?;
            let mu = param(params, "mu", 0.5);
            let s = param(params, "sigma", 0.2);
            let acts = FiniteActions::new(ActionSpace::finite(vec![0.0], vec![1.0], 0.0)?)?;
            let c = ScalarCoefficients::new(move |_, x, _| mu * x, move |_, x, _| s * x, |_, _, _| 0.0, |x| x)
                .control_free();
            let spec = ProblemSpec::scalar(name, c, acts, horizon, param(params, "x0", 1.0))?
                .with_constants((mu.abs() + s.abs()).max(1.0), 1.0);
            (spec, OracleKind::LinearExpectation)
        }
        other => {
            return Err(Error::config(
                "benchmark.name",
                format!("unknown benchmark `{other}`; registered: {BENCHMARKS:?}"),
            ))
        }
    };
    Ok((
        spec,
        BenchmarkSpec {
            name: name.to_string(),
            params: params.clone(),
            oracle_kind: kind,
        },
    ))
}
