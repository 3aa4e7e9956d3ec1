//! Approximation of a piecewise-constant control by a marked point process whose
//! compensator has a density bounded below.
//!
//! For a control `alpha = alpha_n` on `[t_n, t_{n+1})` the construction places the
//! `n`-th change at `R_n = t_n + V_1 + ... + V_n` with `V_j ~ Exp(m 2^j)`, draws the
//! new mark from `lambda` restricted to the `1/m`-ball around `alpha_n`, and
//! superposes an independent Poisson process with intensity `lambda(da) / k`.

use rayon::prelude::*;

use crate::action::FiniteActions;
use crate::error::{Error, Result};
use crate::point_process::{JumpControlPath, MarkedPointPath};
use crate::rng::{path_stream, Purpose, RngStream};
use crate::stats::Estimate;

/// Deterministic piecewise-constant control.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseControl {
    /// `0 = t_0 < t_1 < ... < t_N = T`.
    pub times: Vec<f64>,
    /// Action index on `[t_n, t_{n+1})`.
    pub values: Vec<usize>,
}

impl PiecewiseControl {
    pub fn new(times: Vec<f64>, values: Vec<usize>) -> Result<Self> {
        if times.len() < 2 || values.len() + 1 != times.len() {
            return Err(Error::invalid("alpha", "need N >= 1 pieces and N + 1 breakpoints"));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("alpha", "breakpoints must start at 0 and increase"));
        }
        Ok(PiecewiseControl { times, values })
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn value(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        self.values[k.saturating_sub(1).min(self.values.len() - 1)]
    }
}

/// Compensator density of the approximating process relative to `lambda`.
#[derive(Debug, Clone)]
pub struct ApproxIntensity {
    /// `(S_n, R_n, lambda_nm, ball members, lambda(ball))`.
    windows: Vec<(f64, f64, f64, Vec<usize>, f64)>,
    floor: f64,
}

impl ApproxIntensity {
    /// `nu_hat(t, a)`, the density of the compensator with respect to `lambda(da) dt`.
    pub fn density(&self, t: f64, a: usize) -> f64 {
        let mut v = self.floor;
        for (s, r, rate, ball, mass) in &self.windows {
            if t > *s && t <= *r && ball.contains(&a) {
                v += rate / mass;
            }
        }
        v
    }

    pub fn lower_bound(&self) -> f64 {
        self.floor
    }
}

#[derive(Debug, Clone)]
pub struct Approximation {
    /// Superposition of the lagged changes and the added Poisson process.
    pub path: MarkedPointPath,
    pub nu_hat: ApproxIntensity,
    /// `int_0^T rho(I_hat_t, alpha_t) dt`.
    pub distance: f64,
    /// `int_0^T rho(alpha^m_t, alpha_t) dt` for the lagged control alone.
    pub lag_distance: f64,
    /// First event time of the added Poisson process (infinite if none).
    pub first_poisson: f64,
}

/// One realization of the construction. `aux` drives the lags and kernel
/// draws, `poisson` the added Poisson process.
pub fn approximate_control(
    alpha: &PiecewiseControl,
    actions: &FiniteActions,
    m: u32,
    k: u32,
    aux: &mut RngStream,
    poisson: &mut RngStream,
) -> Result<Approximation> {
    if m == 0 || k == 0 {
        return Err(Error::invalid("m, k", "must be at least 1"));
    }
    if alpha.values[0] != actions.a0_index() {
        return Err(Error::invalid("alpha", "alpha(0) must equal the anchor action a0"));
    }
    let horizon = alpha.horizon();
    let radius = 1.0 / m as f64;
    let mut lag_times = Vec::new();
    let mut lag_marks = Vec::new();
    let mut windows = Vec::new();
    let mut cum = 0.0;
    let mut prev_r = 0.0;
    for n in 1..alpha.values.len() {
        let rate = m as f64 * 2f64.powi(n as i32);
        let v = aux.exponential(rate);
        cum += v;
        let r = alpha.times[n] + cum;
        let ball = actions.ball(alpha.values[n], radius);
        let weights: Vec<f64> = ball.iter().map(|&a| actions.weight(a)).collect();
        let mass: f64 = weights.iter().sum();
        if !(mass > 0.0) {
            return Err(Error::invalid("alpha", "kernel ball has zero mass"));
        }
        let beta = ball[aux.categorical(&weights)];
        windows.push((r - v, r, rate, ball, mass));
        if r <= horizon && r > prev_r {
            lag_times.push(r);
            lag_marks.push(beta);
        }
        prev_r = r;
    }
    let rate = actions.total_mass() / k as f64;
    let mut pois_times = Vec::new();
    let mut pois_marks = Vec::new();
    let mut t = poisson.exponential(rate);
    let first_poisson = t;
    while t <= horizon {
        pois_times.push(t);
        pois_marks.push(poisson.categorical(actions.weights()));
        t += poisson.exponential(rate);
    }
    let lagged = MarkedPointPath {
        horizon,
        times: lag_times,
        marks: lag_marks,
        lifted_marks: None,
    };
    let mut events: Vec<(f64, usize)> = lagged
        .times
        .iter()
        .copied()
        .zip(lagged.marks.iter().copied())
        .chain(pois_times.into_iter().zip(pois_marks))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let path = MarkedPointPath {
        horizon,
        times: events.iter().map(|e| e.0).collect(),
        marks: events.iter().map(|e| e.1).collect(),
        lifted_marks: None,
    };
    let a0 = actions.a0_index();
    let distance = integrated_rho(actions, &JumpControlPath::new(path.clone(), a0), alpha);
    let lag_distance = integrated_rho(actions, &JumpControlPath::new(lagged, a0), alpha);
    Ok(Approximation {
        path,
        nu_hat: ApproxIntensity {
            windows,
            floor: 1.0 / k as f64,
        },
        distance,
        lag_distance,
        first_poisson: if first_poisson <= horizon { first_poisson } else { f64::INFINITY },
    })
}

/// `int_0^T rho(I_t, alpha_t) dt` computed exactly over the merged breakpoints.
pub fn integrated_rho(actions: &FiniteActions, jump: &JumpControlPath, alpha: &PiecewiseControl) -> f64 {
    let horizon = alpha.horizon();
    let mut cuts: Vec<f64> = alpha.times.clone();
    cuts.extend(jump.base.times.iter().copied().filter(|&t| t < horizon));
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    cuts.windows(2)
        .map(|w| (w[1] - w[0]) * actions.rho(jump.value(w[0]), alpha.value(w[0])))
        .sum()
}

#[derive(Debug, Clone, Copy)]
pub struct ApproximationSummary {
    pub distance: Estimate,
    pub lag_distance: Estimate,
    /// Fraction of replications with no added Poisson event on `[0, T]`.
    pub no_poisson_fraction: f64,
}

/// Replicated construction with common random numbers across `(m, k)`.
pub fn approximation_ensemble(
    alpha: &PiecewiseControl,
    actions: &FiniteActions,
    m: u32,
    k: u32,
    n_reps: usize,
    seed: u64,
) -> Result<ApproximationSummary> {
    let reps: Vec<Approximation> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut aux = path_stream(seed, r, Purpose::Auxiliary);
            let mut pois = path_stream(seed, r, Purpose::Poisson);
            approximate_control(alpha, actions, m, k, &mut aux, &mut pois)
        })
        .collect::<Result<_>>()?;
    if reps.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let d: Vec<f64> = reps.iter().map(|a| a.distance).collect();
    let l: Vec<f64> = reps.iter().map(|a| a.lag_distance).collect();
    let none = reps.iter().filter(|a| a.first_poisson.is_infinite()).count();
    Ok(ApproximationSummary {
        distance: Estimate::from_samples(&d),
        lag_distance: Estimate::from_samples(&l),
        no_poisson_fraction: none as f64 / reps.len() as f64,
    })
}
