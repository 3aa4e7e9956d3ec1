//! Marked point processes on a finite action space.
//!
//! Paths are sampled under the base Poisson measure (compensator `lambda(da) dt`)
//! and turned into intensity-controlled paths either by reweighting with the
//! Doleans-Dade exponential `kappa` or by the pathwise time change. Intensities
//! are read on the simulation grid: on `(t_i, t_{i+1}]` the field is evaluated at
//! `(t_i, X_{t_i}, I_{t_i}, a)`, and the same frozen field feeds `kappa`, the time
//! change and the compensator, so the two constructions agree exactly in law.

use crate::action::{lift_measure, FiniteActions, LiftedMeasure};
use crate::error::{Error, Result};
use crate::intensity::{checked, IntensityField};
use crate::rng::{RngStream, TimeGrid};
use crate::stats::Estimate;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPointPath {
    pub horizon: f64,
    pub times: Vec<f64>,
    /// Mark indices into the action space.
    pub marks: Vec<usize>,
    /// Real pre-images of the marks under the lifting projection.
    pub lifted_marks: Option<Vec<f64>>,
}

impl MarkedPointPath {
    pub fn empty(horizon: f64) -> Self {
        MarkedPointPath {
            horizon,
            times: Vec::new(),
            marks: Vec::new(),
            lifted_marks: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of events with time `<= t`.
    pub fn count_until(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Checks strict time ordering, the horizon and mark membership.
    pub fn validate(&self, n_marks: usize) -> Result<()> {
        if self.times.len() != self.marks.len() {
            return Err(Error::invalid("path", "times and marks differ in length"));
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("path", format!("event times not increasing at {}", w[1])));
            }
        }
        if let Some(&t) = self.times.first() {
            if !(t > 0.0) {
                return Err(Error::invalid("path", "first event time must be positive"));
            }
        }
        if let Some(&t) = self.times.last() {
            if t > self.horizon {
                return Err(Error::invalid("path", format!("event at {t} beyond horizon {}", self.horizon)));
            }
        }
        if self.marks.iter().any(|&m| m >= n_marks) {
            return Err(Error::invalid("path", "mark outside the action space"));
        }
        Ok(())
    }

    /// Restriction to `(0, horizon]`.
    pub fn truncate(&self, horizon: f64) -> MarkedPointPath {
        let k = self.count_until(horizon);
        MarkedPointPath {
            horizon,
            times: self.times[..k].to_vec(),
            marks: self.marks[..k].to_vec(),
            lifted_marks: self.lifted_marks.as_ref().map(|r| r[..k].to_vec()),
        }
    }
}

/// The piecewise-constant process `I`: `a0` before the first event, then the
/// latest mark.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpControlPath {
    pub base: MarkedPointPath,
    pub a0: usize,
}

impl JumpControlPath {
    pub fn new(base: MarkedPointPath, a0: usize) -> Self {
        JumpControlPath { base, a0 }
    }

    /// Right-continuous value at `t`.
    pub fn value(&self, t: f64) -> usize {
        match self.base.count_until(t) {
            0 => self.a0,
            k => self.base.marks[k - 1],
        }
    }

    /// Values at the left endpoints `t_0, ..., t_{N-1}`; a jump inside
    /// `(t_i, t_{i+1}]` first shows up at index `i + 1`.
    pub fn grid_trace(&self, grid: &TimeGrid) -> Vec<usize> {
        (0..grid.n_steps()).map(|i| self.value(grid.time(i))).collect()
    }
}

/// Poisson sampler with marks drawn through the lifted measure.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    actions: FiniteActions,
    lifted: LiftedMeasure,
}

impl PoissonSampler {
    pub fn new(actions: &FiniteActions) -> Result<Self> {
        Ok(PoissonSampler {
            actions: actions.clone(),
            lifted: lift_measure(&actions.to_space())?,
        })
    }

    pub fn lifted(&self) -> &LiftedMeasure {
        &self.lifted
    }

    pub fn actions(&self) -> &FiniteActions {
        &self.actions
    }

    pub fn sample(&self, horizon: f64, stream: &mut RngStream) -> Result<MarkedPointPath> {
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon", format!("{horizon} is not positive")));
        }
        let rate = self.actions.total_mass();
        let mut path = MarkedPointPath::empty(horizon);
        let mut lifted = Vec::new();
        let mut t = stream.exponential(rate);
        while t <= horizon {
            let r = self.lifted.inverse_cdf(stream.uniform());
            let j = self.lifted.atom_of(r).unwrap_or(self.actions.len() - 1);
            path.times.push(t);
            path.marks.push(j);
            lifted.push(r);
            t += stream.exponential(rate);
        }
        path.lifted_marks = Some(lifted);
        Ok(path)
    }
}

/// Poisson process with intensity `lambda(da) dt` on `(0, horizon]`.
pub fn sample_poisson_mpp(actions: &FiniteActions, horizon: f64, stream: &mut RngStream) -> Result<MarkedPointPath> {
    PoissonSampler::new(actions)?.sample(horizon, stream)
}

/// State and current action at the grid points, as seen by a feedback intensity.
#[derive(Debug, Clone, Copy)]
pub struct GridTrace<'a> {
    pub dim: usize,
    /// `states[i * dim..(i + 1) * dim]` is `X_{t_i}`; may be empty when `dim == 0`.
    pub states: &'a [f64],
    /// `I_{t_i}` for every interval.
    pub actions: &'a [usize],
}

impl<'a> GridTrace<'a> {
    pub fn state(&self, i: usize) -> &'a [f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }
}

/// Sum over marks of `(1 - nu(a)) lambda(a)` with the field frozen at `t_i`.
fn exponent_rate(
    nu: &dyn IntensityField,
    actions: &FiniteActions,
    t: f64,
    x: &[f64],
    current: usize,
) -> Result<f64> {
    let mut s = 0.0;
    for a in 0..actions.len() {
        s += (1.0 - checked(nu, t, x, current, a)?) * actions.weight(a);
    }
    Ok(s)
}

/// `kappa_t` for a base path and a grid trace of (state, current action).
pub fn girsanov_weight(
    path: &MarkedPointPath,
    nu: &dyn IntensityField,
    actions: &FiniteActions,
    grid: &TimeGrid,
    trace: &GridTrace,
    t: f64,
) -> Result<f64> {
    if !(t >= 0.0 && t <= path.horizon) {
        return Err(Error::TimeOutOfRange { t, horizon: path.horizon });
    }
    let mut log_k = 0.0;
    let mut n = 0;
    for i in 0..grid.n_steps() {
        let (s0, s1) = (grid.time(i), grid.time(i + 1));
        if s0 >= t {
            break;
        }
        let x = trace.state(i);
        let c = trace.actions[i];
        log_k += exponent_rate(nu, actions, s0, x, c)? * (s1.min(t) - s0);
        while n < path.len() && path.times[n] <= s1 && path.times[n] <= t {
            log_k += checked(nu, s0, x, c, path.marks[n])?.ln();
            n += 1;
        }
    }
    Ok(log_k.exp())
}

/// `kappa` at every grid point, starting from 1.
pub fn kappa_on_grid(
    path: &MarkedPointPath,
    nu: &dyn IntensityField,
    actions: &FiniteActions,
    grid: &TimeGrid,
    trace: &GridTrace,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.n_steps() + 1);
    let mut log_k = 0.0;
    out.push(1.0);
    let mut n = 0;
    for i in 0..grid.n_steps() {
        let (s0, s1) = (grid.time(i), grid.time(i + 1));
        let x = trace.state(i);
        let c = trace.actions[i];
        log_k += exponent_rate(nu, actions, s0, x, c)? * (s1 - s0);
        while n < path.len() && path.times[n] <= s1 {
            log_k += checked(nu, s0, x, c, path.marks[n])?.ln();
            n += 1;
        }
        out.push(log_k.exp());
    }
    Ok(out)
}

/// Predictable test field `H(t, history strictly before t, a)`.
pub trait TestField: Sync {
    fn eval(&self, t: f64, times: &[f64], marks: &[usize], a: usize) -> f64;
}

impl<F> TestField for F
where
    F: Fn(f64, &[f64], &[usize], usize) -> f64 + Sync,
{
    fn eval(&self, t: f64, times: &[f64], marks: &[usize], a: usize) -> f64 {
        self(t, times, marks, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Paths already follow the `nu`-controlled law.
    Unweighted,
    /// Base Poisson paths, weighted by `kappa_T`.
    Girsanov,
}

#[derive(Debug, Clone, Copy)]
pub struct CompensatorCheck {
    pub jump_side: Estimate,
    pub compensator_side: Estimate,
    pub residual: f64,
    pub se: f64,
}

const GL3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Monte-Carlo estimate of `E int H dmu - E int int H nu lambda(da) dt`.
///
/// The `dt` integral is split at grid points and event times and integrated by
/// three-point Gauss-Legendre on each piece, where the history is constant.
pub fn compensator_residual(
    ensemble: &[MarkedPointPath],
    nu: &dyn IntensityField,
    h: &dyn TestField,
    actions: &FiniteActions,
    grid: &TimeGrid,
    weighting: Weighting,
) -> Result<CompensatorCheck> {
    use rayon::prelude::*;
    if ensemble.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let a0 = actions.a0_index();
    let per_path: Vec<(f64, f64, f64)> = ensemble
        .par_iter()
        .map(|path| -> Result<(f64, f64, f64)> {
            let trace_actions = JumpControlPath::new(path.clone(), a0).grid_trace(grid);
            let trace = GridTrace {
                dim: 0,
                states: &[],
                actions: &trace_actions,
            };
            let w = match weighting {
                Weighting::Unweighted => 1.0,
                Weighting::Girsanov => girsanov_weight(path, nu, actions, grid, &trace, path.horizon)?,
            };
            let mut jumps = 0.0;
            for n in 0..path.len() {
                jumps += h.eval(path.times[n], &path.times[..n], &path.marks[..n], path.marks[n]);
            }
            let mut comp = 0.0;
            let mut n = 0;
            for (i, &c) in trace_actions.iter().enumerate().take(grid.n_steps()) {
                let (s0, s1) = (grid.time(i), grid.time(i + 1));
                let rates: Vec<f64> = (0..actions.len())
                    .map(|a| Ok(checked(nu, s0, &[], c, a)? * actions.weight(a)))
                    .collect::<Result<_>>()?;
                let mut u = s0;
                loop {
                    let v = if n < path.len() && path.times[n] < s1 { path.times[n] } else { s1 };
                    if v > u {
                        let (mid, half) = (0.5 * (u + v), 0.5 * (v - u));
                        for (node, wq) in GL3 {
                            let s = mid + half * node;
                            for (a, r) in rates.iter().enumerate() {
                                comp += wq * half * r * h.eval(s, &path.times[..n], &path.marks[..n], a);
                            }
                        }
                    }
                    if v >= s1 {
                        break;
                    }
                    u = v;
                    n += 1;
                }
                while n < path.len() && path.times[n] <= s1 {
                    n += 1;
                }
            }
            Ok((w * jumps, w * comp, w * (jumps - comp)))
        })
        .collect::<Result<_>>()?;
    let jumps: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    let comp: Vec<f64> = per_path.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = per_path.iter().map(|p| p.2).collect();
    let d = Estimate::from_samples(&diff);
    Ok(CompensatorCheck {
        jump_side: Estimate::from_samples(&jumps),
        compensator_side: Estimate::from_samples(&comp),
        residual: d.mean,
        se: d.se,
    })
}

/// Output of the time change driven jointly with a state recursion.
#[derive(Debug, Clone)]
pub struct TimeChanged {
    pub path: MarkedPointPath,
    /// `I_{t_i}` for every interval.
    pub trace: Vec<usize>,
    /// `X_{t_0}, ..., X_{t_N}` flattened.
    pub states: Vec<f64>,
}

/// Time-changed sequence `(T_n^nu, A_n^nu)` for an intensity that does not read
/// the state.
pub fn time_change_sequence(
    base: &MarkedPointPath,
    lifted: &LiftedMeasure,
    actions: &FiniteActions,
    nu: &dyn IntensityField,
    grid: &TimeGrid,
) -> Result<MarkedPointPath> {
    Ok(time_change_with_state(base, lifted, actions, nu, grid, &[], |_, _, _| Ok(Vec::new()))?.path)
}

/// Time change built interval by interval together with the state.
///
/// `step(i, x_i, a_i)` returns `X_{t_{i+1}}`. On each grid interval the clock
/// `theta` grows linearly with slope `sum_a nu(a) lambda(a) / lambda(A)`; the next
/// event fires when it has consumed the next base inter-arrival gap, located by
/// bisection. The new mark inverts the `nu`-tilted lifted CDF at the base mark's
/// CDF level.
pub fn time_change_with_state(
    base: &MarkedPointPath,
    lifted: &LiftedMeasure,
    actions: &FiniteActions,
    nu: &dyn IntensityField,
    grid: &TimeGrid,
    x0: &[f64],
    mut step: impl FnMut(usize, &[f64], usize) -> Result<Vec<f64>>,
) -> Result<TimeChanged> {
    let lifted_marks = base
        .lifted_marks
        .as_ref()
        .ok_or_else(|| Error::invalid("base", "time change needs lifted marks"))?;
    let horizon = grid.t_end();
    let (_, nu_max) = nu.bounds();
    if base.horizon < nu_max * horizon * (1.0 - 1e-12) {
        return Err(Error::invalid(
            "base",
            format!(
                "base horizon {} shorter than nu_max * T = {}",
                base.horizon,
                nu_max * horizon
            ),
        ));
    }
    let total = actions.total_mass();
    let tol = 1e-10 * horizon;
    let mut out = MarkedPointPath::empty(horizon);
    let mut out_lifted = Vec::new();
    let mut trace = Vec::with_capacity(grid.n_steps());
    let mut states = x0.to_vec();
    let mut x = x0.to_vec();
    let mut cur = actions.a0_index();
    let mut n = 0;
    let mut acc = 0.0;
    let mut prev_base = 0.0;
    let mut tilt = vec![0.0; actions.len()];
    for i in 0..grid.n_steps() {
        let (t0, t1) = (grid.time(i), grid.time(i + 1));
        for (a, v) in tilt.iter_mut().enumerate() {
            *v = checked(nu, t0, &x, cur, a)?;
        }
        let slope = tilt.iter().zip(actions.weights()).map(|(v, w)| v * w).sum::<f64>() / total;
        let mut next = cur;
        let mut s = t0;
        while n < base.len() {
            let gap = base.times[n] - prev_base;
            let need = gap - acc;
            if acc + slope * (t1 - s) < gap {
                acc += slope * (t1 - s);
                break;
            }
            let (mut lo, mut hi) = (s, t1);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if slope * (mid - s) >= need {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let tau = hi.max(out.times.last().map_or(0.0, |&p| p + f64::EPSILON));
            let level = lifted.cdf(lifted_marks[n]);
            let r = lifted.inverse_weighted_cdf(level, |j| tilt[j]);
            let mark = lifted.atom_of(r).unwrap_or(actions.len() - 1);
            out.times.push(tau);
            out.marks.push(mark);
            out_lifted.push(r);
            next = mark;
            prev_base = base.times[n];
            acc = 0.0;
            s = tau;
            n += 1;
        }
        trace.push(cur);
        x = step(i, &x, cur)?;
        states.extend_from_slice(&x);
        cur = next;
    }
    out.lifted_marks = Some(out_lifted);
    Ok(TimeChanged {
        path: out,
        trace,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::ActionSpace;
    use crate::intensity::ConstantIntensity;
    use crate::rng::split_stream;

    fn acts() -> FiniteActions {
        FiniteActions::new(ActionSpace::finite(vec![-1.0, 1.0], vec![1.0, 1.0], -1.0).unwrap()).unwrap()
    }

    #[test]
    fn rejects_nonpositive_horizon() {
        assert!(sample_poisson_mpp(&acts(), 0.0, &mut split_stream(0, 0)).is_err());
    }

    #[test]
    fn sampled_paths_are_valid() {
        for p in 0..200 {
            let path = sample_poisson_mpp(&acts(), 3.0, &mut split_stream(3, p)).unwrap();
            path.validate(2).unwrap();
            assert_eq!(path.lifted_marks.as_ref().unwrap().len(), path.len());
        }
    }

    #[test]
    fn closed_form_weight() {
        let path = MarkedPointPath {
            horizon: 1.0,
            times: vec![0.3, 0.7],
            marks: vec![1, 0],
            lifted_marks: None,
        };
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let tr = JumpControlPath::new(path.clone(), 0).grid_trace(&grid);
        let trace = GridTrace {
            dim: 0,
            states: &[],
            actions: &tr,
        };
        let k = girsanov_weight(&path, &ConstantIntensity(0.5), &acts(), &grid, &trace, 1.0).unwrap();
        assert!((k - std::f64::consts::E * 0.25).abs() < 1e-12);
        let one = girsanov_weight(&path, &ConstantIntensity(1.0), &acts(), &grid, &trace, 0.5).unwrap();
        assert_eq!(one, 1.0);
        assert!(girsanov_weight(&path, &ConstantIntensity(1.0), &acts(), &grid, &trace, 1.5).is_err());
    }

    #[test]
    fn unit_intensity_time_change_is_identity() {
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let sampler = PoissonSampler::new(&acts()).unwrap();
        for p in 0..100 {
            let base = sampler.sample(1.0, &mut split_stream(5, p)).unwrap();
            let tc = time_change_sequence(&base, sampler.lifted(), &acts(), &ConstantIntensity(1.0), &grid).unwrap();
            assert_eq!(tc.marks, base.marks);
            for (a, b) in tc.times.iter().zip(&base.times) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_intensity_rescales_time() {
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let sampler = PoissonSampler::new(&acts()).unwrap();
        let c = 3.0;
        for p in 0..100 {
            let base = sampler.sample(c, &mut split_stream(6, p)).unwrap();
            let tc = time_change_sequence(&base, sampler.lifted(), &acts(), &ConstantIntensity(c), &grid).unwrap();
            assert_eq!(tc.len(), base.len());
            for (a, b) in tc.times.iter().zip(&base.times) {
                assert!((a - b / c).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn short_base_horizon_rejected() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let sampler = PoissonSampler::new(&acts()).unwrap();
        let base = sampler.sample(1.0, &mut split_stream(6, 0)).unwrap();
        assert!(time_change_sequence(&base, sampler.lifted(), &acts(), &ConstantIntensity(2.0), &grid).is_err());
    }

    #[test]
    fn jump_control_left_limit_trace() {
        let path = MarkedPointPath {
            horizon: 1.0,
            times: vec![0.25, 0.5],
            marks: vec![1, 0],
            lifted_marks: None,
        };
        let jc = JumpControlPath::new(path, 0);
        assert_eq!(jc.value(0.0), 0);
        assert_eq!(jc.value(0.25), 1);
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        assert_eq!(jc.grid_trace(&grid), vec![0, 1, 0, 0]);
    }
}
