//! Least-squares Monte-Carlo solver for the penalized BSDE with jumps driven by
//! the randomized state `(X, I)` under the base Poisson measure.
//!
//! On each grid step the conditional expectations
//! `Q_i(x, c; a) = E[Y_{i+1}(X_{i+1}, a) | X_i = x, I_i = c]`
//! are regressed separately for every current action `c`. Because the action
//! switch only acts from the next grid point on, `X_{i+1}` does not depend on a
//! jump inside the step, so `Y_{i+1}` can be evaluated at every candidate mark on
//! every path. Then
//!
//! ```text
//! U_i(a)  = Q_i(x, c; a) - Q_i(x, c; c)
//! Y_i     = Q_i(x, c; c) + f(t_i, x, c) dt + n dt sum_a lambda(a) U_i(a)^+
//! Z_i     = E[(Y_{i+1} - Q_i(x, c; c)) dW_i | x, c] / dt
//! ```
//!
//! and `K` accumulates the penalty along each simulated path.

use std::sync::Arc;
use std::time::Instant;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::intensity::{IntensityFamily, IntensityField};
use crate::point_process::PoissonSampler;
use crate::problem::ProblemSpec;
use crate::randomized::{optimize_functional, OptimizeConfig, RandomizedGain};
use crate::rng::TimeGrid;
use crate::sde::{EulerStepper, StatePath};
use crate::stats::{pairwise_sum, Estimate};

/// Polynomials of the standardized state up to `degree` in each coordinate,
/// fitted separately for every current action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RegressionBasis {
    pub degree: usize,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis { degree: 3 }
    }
}

impl RegressionBasis {
    pub fn features(&self, dim: usize) -> usize {
        self.degree * dim
    }

    fn fill(&self, x: &[f64], scaling: &Scaling, out: &mut [f64]) {
        let mut j = 0;
        for (k, xk) in x.iter().enumerate() {
            let s = (xk - scaling.mean[k]) / scaling.sd[k];
            let mut p = 1.0;
            for _ in 0..self.degree {
                p *= s;
                out[j] = p;
                j += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Scaling {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

/// Paths of `(X, I, W)` under the base measure, stored time-major.
#[derive(Debug, Clone)]
pub struct BsdeEnsemble {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub dim_x: usize,
    pub dim_w: usize,
    /// `x[(i * n_paths + p) * dim_x + k]`, `i = 0..=N`.
    pub x: Vec<f64>,
    /// `dw[(i * n_paths + p) * dim_w + k]`, `i = 0..N`.
    pub dw: Vec<f64>,
    /// `act[i * n_paths + p] = I_{t_i}`, `i = 0..N`.
    pub act: Vec<u32>,
    /// `f(t_i, X_i, I_i)` for `i = 0..N`.
    pub running: Vec<f64>,
    /// `g(X_N)`.
    pub terminal: Vec<f64>,
}

impl BsdeEnsemble {
    pub fn state(&self, i: usize, p: usize) -> &[f64] {
        let o = (i * self.n_paths + p) * self.dim_x;
        &self.x[o..o + self.dim_x]
    }

    pub fn action(&self, i: usize, p: usize) -> usize {
        self.act[i * self.n_paths + p] as usize
    }

    /// Per-path `(X, I)` view for path `p`.
    pub fn path(&self, p: usize) -> StatePath {
        let n = self.grid.n_steps();
        StatePath {
            grid: self.grid.clone(),
            dim: self.dim_x,
            states: (0..=n).flat_map(|i| self.state(i, p).to_vec()).collect(),
            control_trace: (0..n).map(|i| self.action(i, p)).collect(),
        }
    }
}

/// Simulate the base-measure ensemble shared by every penalty level.
pub fn simulate_ensemble(spec: &ProblemSpec, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<BsdeEnsemble> {
    use crate::rng::{path_stream, sample_brownian, Purpose};
    use crate::sde::{simulate_controlled, Control};
    if n_paths == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let sampler = PoissonSampler::new(&spec.actions)?;
    let n = grid.n_steps();
    let dx = spec.dim_x;
    let dw = spec.dim_w;
    let a0 = spec.actions.a0_index();
    struct One {
        x: Vec<f64>,
        dw: Vec<f64>,
        act: Vec<u32>,
        run: Vec<f64>,
        g: f64,
    }
    let paths: Vec<One> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mpp = sampler.sample(spec.horizon, &mut path_stream(seed, p, Purpose::Poisson))?;
            let w = sample_brownian(grid, dw, &mut path_stream(seed, p, Purpose::Brownian))?;
            let jc = crate::point_process::JumpControlPath::new(mpp, a0);
            let st = simulate_controlled(spec, Control::Jump(&jc), &w)?;
            let stepper = EulerStepper::new(spec);
            let run = (0..n)
                .map(|i| stepper.running(grid.time(i), st.state(i), st.control_trace[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut act: Vec<u32> = st.control_trace.iter().map(|&a| a as u32).collect();
            act.push(jc.value(grid.t_end()) as u32);
            Ok(One {
                g: stepper.terminal(st.terminal())?,
                x: st.states,
                dw: w.increments,
                act,
                run,
            })
        })
        .collect::<Result<_>>()?;
    let mut ens = BsdeEnsemble {
        grid: grid.clone(),
        n_paths,
        dim_x: dx,
        dim_w: dw,
        x: vec![0.0; (n + 1) * n_paths * dx],
        dw: vec![0.0; n * n_paths * dw],
        act: vec![0; (n + 1) * n_paths],
        running: vec![0.0; n * n_paths],
        terminal: Vec::with_capacity(n_paths),
    };
    for (p, one) in paths.into_iter().enumerate() {
        for i in 0..=n {
            let o = (i * n_paths + p) * dx;
            ens.x[o..o + dx].copy_from_slice(&one.x[i * dx..(i + 1) * dx]);
            ens.act[i * n_paths + p] = one.act[i];
        }
        for i in 0..n {
            let o = (i * n_paths + p) * dw;
            ens.dw[o..o + dw].copy_from_slice(&one.dw[i * dw..(i + 1) * dw]);
            ens.running[i * n_paths + p] = one.run[i];
        }
        ens.terminal.push(one.g);
    }
    Ok(ens)
}

#[derive(Debug, Clone)]
enum StepModel {
    /// `beta[a * (F + 1)..]`: intercept then slopes of `Q(., c; a)`; `gamma` the
    /// same layout for the `dim_w` components of `Z`.
    Regressed { beta: Vec<f64>, gamma: Vec<f64> },
    /// Too few paths in this current-action group: propagate the drift over one
    /// step and read the next-step value.
    Propagated,
}

#[derive(Debug, Clone)]
struct StepCoeffs {
    scaling: Scaling,
    models: Vec<StepModel>,
    range: Vec<(f64, f64)>,
}

#[derive(Clone)]
pub struct BsdeGridSolution {
    pub n_penalty: f64,
    pub grid: TimeGrid,
    pub basis: RegressionBasis,
    spec: ProblemSpec,
    steps: Vec<Option<StepCoeffs>>,
    /// `Y_0(x0, a0)` with the SE of its pathwise decomposition.
    pub y0: Estimate,
    /// `E sum_i sum_a lambda(a) U_i(a)^+ dt`.
    pub g_n: Estimate,
    /// `k[p * (N + 1) + i]`: penalty accumulated along path `p` up to `t_i`.
    pub k: Vec<f64>,
    pub n_paths: usize,
    /// `max |Y_i| / (1 + sup_t |X_t|^q)` over paths and steps, `q = max(r, 2)`.
    pub bound_ratio: f64,
    pub propagated_steps: usize,
}

impl std::fmt::Debug for BsdeGridSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BsdeGridSolution")
            .field("n_penalty", &self.n_penalty)
            .field("y0", &self.y0)
            .field("g_n", &self.g_n)
            .finish()
    }
}

impl BsdeGridSolution {
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn dot(&self, coeffs: &[f64], phi: &[f64]) -> f64 {
        coeffs[0] + coeffs[1..].iter().zip(phi).map(|(b, f)| b * f).sum::<f64>()
    }

    /// `Q_i(x, c; a)`.
    pub fn q(&self, i: usize, x: &[f64], c: usize, a: usize) -> f64 {
        let step = self.steps[i].as_ref().expect("step solved");
        match &step.models[c] {
            StepModel::Regressed { beta, .. } => {
                let nf = self.basis.features(x.len());
                let mut phi = vec![0.0; nf];
                self.basis.fill(x, &step.scaling, &mut phi);
                self.dot(&beta[a * (nf + 1)..(a + 1) * (nf + 1)], &phi)
            }
            StepModel::Propagated => {
                let mut b = vec![0.0; x.len()];
                self.spec.coeffs.drift(self.grid.time(i), x, self.spec.mark_value(c), &mut b);
                let dt = self.grid.dt();
                let next: Vec<f64> = x.iter().zip(&b).map(|(xk, bk)| xk + bk * dt).collect();
                self.value(i + 1, &next, a)
            }
        }
    }

    /// `U_i(x, c; a) = Q_i(x, c; a) - Q_i(x, c; c)`.
    pub fn u(&self, i: usize, x: &[f64], c: usize, a: usize) -> f64 {
        if a == c {
            return 0.0;
        }
        self.q(i, x, c, a) - self.q(i, x, c, c)
    }

    /// Regressed `Y_i(x, c)`; at the terminal index this is `g(x)` exactly.
    pub fn value(&self, i: usize, x: &[f64], c: usize) -> f64 {
        if i >= self.grid.n_steps() {
            return self.spec.coeffs.terminal(x);
        }
        let m = self.spec.actions.len();
        let qs: Vec<f64> = (0..m).map(|a| self.q(i, x, c, a)).collect();
        self.assemble(i, x, c, &qs)
    }

    fn assemble(&self, i: usize, x: &[f64], c: usize, qs: &[f64]) -> f64 {
        let dt = self.grid.dt();
        let penalty: f64 = (0..qs.len())
            .map(|a| self.spec.actions.weight(a) * (qs[a] - qs[c]).max(0.0))
            .sum();
        qs[c] + self.spec.coeffs.running(self.grid.time(i), x, self.spec.mark_value(c)) * dt
            + self.n_penalty * dt * penalty
    }

    /// Regressed `Z_i(x, c)`, or `None` where the group was too small to fit.
    pub fn z(&self, i: usize, x: &[f64], c: usize) -> Option<Vec<f64>> {
        let step = self.steps[i].as_ref().expect("step solved");
        match &step.models[c] {
            StepModel::Regressed { gamma, .. } => {
                let nf = self.basis.features(x.len());
                let mut phi = vec![0.0; nf];
                self.basis.fill(x, &step.scaling, &mut phi);
                Some(
                    (0..self.spec.dim_w)
                        .map(|k| self.dot(&gamma[k * (nf + 1)..(k + 1) * (nf + 1)], &phi))
                        .collect(),
                )
            }
            StepModel::Propagated => None,
        }
    }

    pub fn k_path(&self, p: usize) -> &[f64] {
        let n = self.grid.n_steps() + 1;
        &self.k[p * n..(p + 1) * n]
    }

    /// Observed `[min, max]` of state coordinate `k` at step `i`.
    pub fn state_range(&self, i: usize, k: usize) -> (f64, f64) {
        self.steps[i].as_ref().expect("step solved").range[k]
    }
}

fn scaling_at(ens: &BsdeEnsemble, i: usize) -> (Scaling, Vec<(f64, f64)>) {
    let d = ens.dim_x;
    let mut mean = vec![0.0; d];
    let mut sd = vec![1.0; d];
    let mut range = vec![(0.0, 0.0); d];
    for k in 0..d {
        let xs: Vec<f64> = (0..ens.n_paths).map(|p| ens.state(i, p)[k]).collect();
        let e = Estimate::from_samples(&xs);
        mean[k] = e.mean;
        let s = e.se * (e.n as f64).sqrt();
        if s > 1e-12 * (1.0 + e.mean.abs()) {
            sd[k] = s;
        }
        range[k] = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    }
    (Scaling { mean, sd }, range)
}

/// Ridge least squares with an unpenalized intercept for several targets at once.
/// Returns coefficients `[intercept, slopes...]` per target.
fn ridge_fit(phi: &[f64], nf: usize, targets: &[Vec<f64>], step: usize) -> Result<Vec<Vec<f64>>> {
    let rows = phi.len().checked_div(nf).unwrap_or(targets[0].len());
    let mut out = Vec::with_capacity(targets.len());
    let tmeans: Vec<f64> = targets.iter().map(|t| Estimate::from_samples(t).mean).collect();
    if nf == 0 {
        return Ok(tmeans.into_iter().map(|m| vec![m]).collect());
    }
    let mut fmean = vec![0.0; nf];
    for r in 0..rows {
        for j in 0..nf {
            fmean[j] += phi[r * nf + j];
        }
    }
    for v in fmean.iter_mut() {
        *v /= rows as f64;
    }
    let mut gram = DMatrix::<f64>::zeros(nf, nf);
    let mut rhs = DMatrix::<f64>::zeros(nf, targets.len());
    let mut centred = vec![0.0; nf];
    for r in 0..rows {
        for j in 0..nf {
            centred[j] = phi[r * nf + j] - fmean[j];
        }
        for j in 0..nf {
            for l in j..nf {
                gram[(j, l)] += centred[j] * centred[l];
            }
            for (t, tgt) in targets.iter().enumerate() {
                rhs[(j, t)] += centred[j] * (tgt[r] - tmeans[t]);
            }
        }
    }
    for j in 0..nf {
        for l in 0..j {
            gram[(j, l)] = gram[(l, j)];
        }
    }
    let trace = gram.trace();
    let slopes = if trace <= f64::MIN_POSITIVE * nf as f64 {
        DMatrix::<f64>::zeros(nf, targets.len())
    } else {
        let delta = 1e-8 * trace / nf as f64;
        for j in 0..nf {
            gram[(j, j)] += delta;
        }
        match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                let eig = SymmetricEigen::new(gram).eigenvalues;
                let hi = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let lo = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
                return Err(Error::SingularRegression {
                    step,
                    condition: hi / lo,
                });
            }
        }
    };
    for (t, m) in tmeans.iter().enumerate() {
        let mut c = Vec::with_capacity(nf + 1);
        let shift: f64 = (0..nf).map(|j| slopes[(j, t)] * fmean[j]).sum();
        c.push(m - shift);
        c.extend((0..nf).map(|j| slopes[(j, t)]));
        out.push(c);
    }
    Ok(out)
}

/// Backward recursion on a prepared ensemble.
pub fn solve_on_ensemble(
    spec: &ProblemSpec,
    ens: &BsdeEnsemble,
    n_penalty: f64,
    basis: RegressionBasis,
) -> Result<BsdeGridSolution> {
    if !(n_penalty >= 0.0 && n_penalty.is_finite()) {
        return Err(Error::invalid("n_penalty", format!("{n_penalty} must be a finite non-negative number")));
    }
    let grid = &ens.grid;
    let n = grid.n_steps();
    let np = ens.n_paths;
    let m = spec.actions.len();
    let dt = grid.dt();
    let nf = basis.features(ens.dim_x);
    let lam_max = spec.actions.weights().iter().copied().fold(0.0, f64::max);
    if n_penalty * lam_max * dt > 1.0 {
        warn!(
            "penalty step n*lambda*dt = {:.3} exceeds 1; refine the grid for a monotone scheme",
            n_penalty * lam_max * dt
        );
    }
    let min_rows = (2 * (nf + 1)).max(8);
    let mut sol = BsdeGridSolution {
        n_penalty,
        grid: grid.clone(),
        basis,
        spec: spec.clone(),
        steps: vec![None; n],
        y0: Estimate::exact(0.0),
        g_n: Estimate::exact(0.0),
        k: Vec::new(),
        n_paths: np,
        bound_ratio: 0.0,
        propagated_steps: 0,
    };
    // Y_{i+1}(X_{i+1}^p, a) for every path and mark.
    let mut next_vals: Vec<f64> = ens.terminal.iter().flat_map(|g| std::iter::repeat_n(*g, m)).collect();
    let mut penalty_inc = vec![0.0; n * np];
    let mut upos_inc = vec![0.0; np];
    let mut jump_corr = vec![0.0; np];
    let q_exp = spec.growth_r.max(2.0);
    let sup_x: Vec<f64> = (0..np)
        .map(|p| {
            (0..=n)
                .map(|i| ens.state(i, p).iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max)
        })
        .collect();
    let mut bound_ratio: f64 = 0.0;
    for i in (0..n).rev() {
        let (scaling, range) = scaling_at(ens, i);
        let mut models = Vec::with_capacity(m);
        for c in 0..m {
            let rows: Vec<usize> = (0..np).filter(|&p| ens.action(i, p) == c).collect();
            if rows.len() < min_rows {
                models.push(StepModel::Propagated);
                continue;
            }
            let mut phi = vec![0.0; rows.len() * nf];
            for (r, &p) in rows.iter().enumerate() {
                basis.fill(ens.state(i, p), &scaling, &mut phi[r * nf..(r + 1) * nf]);
            }
            let targets: Vec<Vec<f64>> = (0..m)
                .map(|a| rows.iter().map(|&p| next_vals[p * m + a]).collect())
                .collect();
            let fits = ridge_fit(&phi, nf, &targets, i)?;
            let beta: Vec<f64> = fits.concat();
            let qcc = &fits[c];
            let zt: Vec<Vec<f64>> = (0..ens.dim_w)
                .map(|k| {
                    rows.iter()
                        .enumerate()
                        .map(|(r, &p)| {
                            let fit = qcc[0]
                                + qcc[1..].iter().zip(&phi[r * nf..(r + 1) * nf]).map(|(b, f)| b * f).sum::<f64>();
                            (next_vals[p * m + c] - fit) * ens.dw[(i * np + p) * ens.dim_w + k] / dt
                        })
                        .collect()
                })
                .collect();
            let gamma = ridge_fit(&phi, nf, &zt, i)?.concat();
            models.push(StepModel::Regressed { beta, gamma });
        }
        sol.propagated_steps += models.iter().filter(|mm| matches!(mm, StepModel::Propagated)).count();
        sol.steps[i] = Some(StepCoeffs { scaling, models, range });
        let sol_ref = &sol;
        let ev: Vec<(Vec<f64>, f64, f64)> = (0..np)
            .into_par_iter()
            .map(|p| {
                let x = ens.state(i, p);
                let c = ens.action(i, p);
                let mut vals = vec![0.0; m];
                let mut pen_here = 0.0;
                let mut upos = 0.0;
                for (cc, v) in vals.iter_mut().enumerate() {
                    let qs: Vec<f64> = (0..m).map(|a| sol_ref.q(i, x, cc, a)).collect();
                    *v = sol_ref.assemble(i, x, cc, &qs);
                    if cc == c {
                        upos = (0..m).map(|a| spec.actions.weight(a) * (qs[a] - qs[c]).max(0.0)).sum::<f64>() * dt;
                        pen_here = n_penalty * upos;
                    }
                }
                (vals, pen_here, upos)
            })
            .collect();
        // Jump corrections for the pathwise decomposition use Y_{i+1}.
        if i + 1 < n {
            for p in 0..np {
                let (c, c1) = (ens.action(i, p), ens.action(i + 1, p));
                if c1 != c {
                    jump_corr[p] += next_vals[p * m + c1] - next_vals[p * m + c];
                }
            }
        }
        let mut new_vals = vec![0.0; np * m];
        for (p, (vals, pen, upos)) in ev.into_iter().enumerate() {
            let c = ens.action(i, p);
            let ratio = vals[c].abs() / (1.0 + sup_x[p].powf(q_exp));
            bound_ratio = bound_ratio.max(ratio);
            new_vals[p * m..(p + 1) * m].copy_from_slice(&vals);
            penalty_inc[i * np + p] = pen;
            upos_inc[p] += upos;
        }
        next_vals = new_vals;
    }
    let mut k = vec![0.0; np * (n + 1)];
    for p in 0..np {
        for i in 0..n {
            k[p * (n + 1) + i + 1] = k[p * (n + 1) + i] + penalty_inc[i * np + p];
        }
    }
    let pathwise: Vec<f64> = (0..np)
        .map(|p| {
            let run: Vec<f64> = (0..n).map(|i| ens.running[i * np + p] * dt).collect();
            ens.terminal[p] + pairwise_sum(&run) + k[p * (n + 1) + n] - jump_corr[p]
        })
        .collect();
    let pw = Estimate::from_samples(&pathwise);
    let y0 = sol.value(0, &spec.x0, spec.actions.a0_index());
    sol.y0 = Estimate {
        mean: y0,
        se: pw.se,
        n: pw.n,
    };
    sol.g_n = Estimate::from_samples(&upos_inc);
    sol.k = k;
    sol.bound_ratio = bound_ratio;
    Ok(sol)
}

/// Simulate the ensemble and solve at one penalty level.
pub fn solve_penalized(
    spec: &ProblemSpec,
    n_penalty: f64,
    grid: &TimeGrid,
    basis: RegressionBasis,
    n_paths: usize,
    seed: u64,
) -> Result<BsdeGridSolution> {
    let ens = simulate_ensemble(spec, grid, n_paths, seed)?;
    solve_on_ensemble(spec, &ens, n_penalty, basis)
}

#[derive(Debug, Clone, Serialize)]
pub struct PenaltyRow {
    pub n_penalty: f64,
    pub y0: Estimate,
    pub g_n: Estimate,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintReport {
    pub rows: Vec<PenaltyRow>,
    pub converged: bool,
    /// Set when `Y0` decreased by more than 2 SE between consecutive levels.
    pub non_monotone: bool,
}

pub const DEFAULT_SCHEDULE: [f64; 7] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

/// Penalized solves along an increasing schedule on common paths. Stops when
/// consecutive `Y0` differ by less than `stop_tol` (default `1e-3 (1 + |Y0|)`).
pub fn solve_constrained(
    spec: &ProblemSpec,
    schedule: &[f64],
    stop_tol: Option<f64>,
    grid: &TimeGrid,
    basis: RegressionBasis,
    n_paths: usize,
    seed: u64,
) -> Result<(BsdeGridSolution, ConstraintReport)> {
    if schedule.is_empty() || schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("schedule", "penalty schedule must be non-empty and increasing"));
    }
    let ens = simulate_ensemble(spec, grid, n_paths, seed)?;
    let mut rows: Vec<PenaltyRow> = Vec::new();
    let mut last: Option<BsdeGridSolution> = None;
    let mut converged = false;
    let mut non_monotone = false;
    for &n in schedule {
        let start = Instant::now();
        let sol = solve_on_ensemble(spec, &ens, n, basis)?;
        let runtime_s = start.elapsed().as_secs_f64();
        if let Some(prev) = &last {
            let diff = sol.y0.mean - prev.y0.mean;
            if diff < -2.0 * sol.y0.se {
                non_monotone = true;
                warn!(
                    "Y0 decreased from {:.6} to {:.6} between n = {} and n = {n}",
                    prev.y0.mean, sol.y0.mean, prev.n_penalty
                );
            }
            let tol = stop_tol.unwrap_or(1e-3 * (1.0 + sol.y0.mean.abs()));
            rows.push(PenaltyRow {
                n_penalty: n,
                y0: sol.y0,
                g_n: sol.g_n,
                runtime_s,
            });
            last = Some(sol);
            if diff.abs() < tol {
                converged = true;
                break;
            }
        } else {
            rows.push(PenaltyRow {
                n_penalty: n,
                y0: sol.y0,
                g_n: sol.g_n,
                runtime_s,
            });
            last = Some(sol);
        }
    }
    Ok((
        last.unwrap(),
        ConstraintReport {
            rows,
            converged,
            non_monotone,
        },
    ))
}

/// `nu(t, x, c, a) = n 1{U >= 0} + eps 1{-1 < U < 0} - eps / U 1{U <= -1}` with
/// `U` read from the regression at the grid step containing `t`.
pub struct EpsilonOptimalIntensity {
    solution: Arc<BsdeGridSolution>,
    epsilon: f64,
}

impl IntensityField for EpsilonOptimalIntensity {
    fn evaluate(&self, t: f64, x: &[f64], current: usize, mark: usize) -> f64 {
        let sol = &self.solution;
        let grid = &sol.grid;
        let i = (((t - grid.t_start()) / grid.dt() + 1e-9).floor().max(0.0) as usize).min(grid.n_steps() - 1);
        let u = sol.u(i, x, current, mark);
        if u >= 0.0 {
            sol.n_penalty
        } else if u > -1.0 {
            self.epsilon
        } else {
            -self.epsilon / u
        }
    }

    fn bounds(&self) -> (f64, f64) {
        (f64::MIN_POSITIVE, self.solution.n_penalty.max(self.epsilon))
    }

    fn parameters(&self) -> Vec<f64> {
        vec![self.solution.n_penalty, self.epsilon]
    }

    fn name(&self) -> String {
        format!("eps_optimal(n={}, eps={})", self.solution.n_penalty, self.epsilon)
    }
}

pub fn extract_epsilon_optimal_intensity(
    solution: Arc<BsdeGridSolution>,
    epsilon: f64,
) -> Result<EpsilonOptimalIntensity> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon", format!("{epsilon} not in (0, 1)")));
    }
    if !(solution.n_penalty > 0.0) {
        return Err(Error::invalid("solution", "extraction needs a positive penalty"));
    }
    Ok(EpsilonOptimalIntensity { solution, epsilon })
}

#[derive(Debug, Clone, Serialize)]
pub struct Residual {
    pub residual: f64,
    pub se: f64,
    pub theta: Vec<f64>,
    pub gain: RandomizedGain,
}

fn check_family(solution: &BsdeGridSolution, family: &dyn IntensityFamily) -> Result<()> {
    let (lo, hi) = family.bounds();
    if !(lo > 0.0 && hi <= solution.n_penalty * (1.0 + 1e-12)) {
        return Err(Error::invalid(
            "family",
            format!("bounds ({lo}, {hi}] must lie in (0, n = {}]", solution.n_penalty),
        ));
    }
    Ok(())
}

/// `Y0 - sup_theta J^R(nu_theta)` over a family bounded by the penalty level.
pub fn representation_residual(
    solution: &BsdeGridSolution,
    family: &dyn IntensityFamily,
    cfg: &OptimizeConfig,
) -> Result<Residual> {
    dpp_residual(solution, family, solution.grid.n_steps(), cfg)
}

/// `Y0 - sup_theta E^nu[sum_{t_i < tau} f dt + Y_tau(X_tau, I_tau)]` at the grid
/// time `tau = t_{tau_index}`.
pub fn dpp_residual(
    solution: &BsdeGridSolution,
    family: &dyn IntensityFamily,
    tau_index: usize,
    cfg: &OptimizeConfig,
) -> Result<Residual> {
    check_family(solution, family)?;
    let n = solution.grid.n_steps();
    if tau_index > n {
        return Err(Error::invalid("tau_index", format!("{tau_index} beyond {n} grid steps")));
    }
    let spec = solution.spec();
    let dt = solution.grid.dt();
    let functional = |st: &StatePath| -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..tau_index {
            acc += spec.coeffs.running(st.grid.time(i), st.state(i), spec.mark_value(st.control_trace[i])) * dt;
        }
        let tail = if tau_index == n {
            spec.coeffs.terminal(st.terminal())
        } else {
            solution.value(tau_index, st.state(tau_index), st.control_trace[tau_index])
        };
        Ok(acc + tail)
    };
    let opt = optimize_functional(spec, &solution.grid, family, cfg, &functional)?;
    Ok(Residual {
        residual: solution.y0.mean - opt.gain.estimate.mean,
        se: solution.y0.combined_se(&opt.gain.estimate),
        theta: opt.theta,
        gain: opt.gain,
    })
}

/// Largest spread across current actions of `Y_i(x, c)` over a probe grid of `x`
/// inside the observed range, maximized over grid times. Scalar states only.
pub fn mark_invariance_diagnostic(solution: &BsdeGridSolution) -> f64 {
    let m = solution.spec.actions.len();
    let mut worst: f64 = 0.0;
    for i in 1..solution.grid.n_steps() {
        let (lo, hi) = solution.state_range(i, 0);
        let probes = 21;
        for j in 0..probes {
            let x = [lo + (hi - lo) * j as f64 / (probes - 1) as f64];
            let vals: Vec<f64> = (0..m).map(|c| solution.value(i, &x, c)).collect();
            let spread = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - vals.iter().copied().fold(f64::INFINITY, f64::min);
            worst = worst.max(spread);
        }
    }
    worst
}
