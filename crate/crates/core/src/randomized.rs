//! The randomized control problem: the action is an exogenous marked point
//! process whose intensity is controlled through `nu`.
//!
//! Two estimators of `J^R(nu)` are provided. The reweighted one simulates base
//! Poisson paths and multiplies the gain by `kappa_T`; the direct one builds the
//! `nu`-controlled point process by the time change and averages the plain gain.

use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intensity::{IntensityFamily, IntensityField};
use crate::point_process::{
    kappa_on_grid, time_change_with_state, GridTrace, JumpControlPath, MarkedPointPath, PoissonSampler,
};
use crate::problem::ProblemSpec;
use crate::rng::{path_stream, sample_brownian, Purpose, TimeGrid};
use crate::sde::{path_functional, simulate_controlled, Control, EulerStepper, StatePath};
use crate::stats::{coefficient_of_variation, Estimate};

/// Coefficient of variation of `kappa_T` above which the reweighted estimate is
/// flagged as unreliable.
pub const WEIGHT_CV_WARNING: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct RandomizedPathBundle {
    pub mpp: MarkedPointPath,
    pub jumps_control: JumpControlPath,
    pub state: StatePath,
    /// `kappa` at the grid points when the bundle is reweighted.
    pub weight_trace: Option<Vec<f64>>,
}

impl RandomizedPathBundle {
    pub fn terminal_weight(&self) -> f64 {
        self.weight_trace.as_ref().map_or(1.0, |w| *w.last().unwrap())
    }
}

/// Base-Poisson bundle for path `p`, with `kappa` when `nu` is given.
pub fn simulate_base_bundle(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    sampler: &PoissonSampler,
    nu: Option<&dyn IntensityField>,
    seed: u64,
    p: u64,
) -> Result<RandomizedPathBundle> {
    let mpp = sampler.sample(spec.horizon, &mut path_stream(seed, p, Purpose::Poisson))?;
    let w = sample_brownian(grid, spec.dim_w, &mut path_stream(seed, p, Purpose::Brownian))?;
    let jumps_control = JumpControlPath::new(mpp.clone(), spec.actions.a0_index());
    let state = simulate_controlled(spec, Control::Jump(&jumps_control), &w)?;
    let weight_trace = match nu {
        Some(nu) => {
            let trace = GridTrace {
                dim: spec.dim_x,
                states: &state.states,
                actions: &state.control_trace,
            };
            Some(kappa_on_grid(&mpp, nu, &spec.actions, grid, &trace)?)
        }
        None => None,
    };
    Ok(RandomizedPathBundle {
        mpp,
        jumps_control,
        state,
        weight_trace,
    })
}

/// Time-changed bundle for path `p`: the base process is sampled on
/// `(0, nu_max T]` from the same stream as [`simulate_base_bundle`].
pub fn simulate_time_changed_bundle(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    sampler: &PoissonSampler,
    nu: &dyn IntensityField,
    seed: u64,
    p: u64,
) -> Result<RandomizedPathBundle> {
    let (_, nu_max) = nu.bounds();
    let base = sampler.sample(spec.horizon * nu_max.max(1.0), &mut path_stream(seed, p, Purpose::Poisson))?;
    let w = sample_brownian(grid, spec.dim_w, &mut path_stream(seed, p, Purpose::Brownian))?;
    let dt = grid.dt();
    let mut stepper = EulerStepper::new(spec);
    let tc = time_change_with_state(&base, sampler.lifted(), &spec.actions, nu, grid, &spec.x0, |i, x, a| {
        let mut out = vec![0.0; x.len()];
        stepper.step(grid.time(i), x, a, dt, w.increment(i), &mut out)?;
        Ok(out)
    })?;
    let state = StatePath {
        grid: grid.clone(),
        dim: spec.dim_x,
        states: tc.states,
        control_trace: tc.trace,
    };
    Ok(RandomizedPathBundle {
        jumps_control: JumpControlPath::new(tc.path.clone(), spec.actions.a0_index()),
        mpp: tc.path,
        state,
        weight_trace: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Reweighted,
    Direct,
}

impl Estimator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Estimator::Reweighted => "reweighted",
            Estimator::Direct => "direct",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RandomizedGain {
    pub estimate: Estimate,
    pub estimator: Estimator,
    pub weight_mean: f64,
    pub weight_cv: f64,
    pub mean_jumps: f64,
}

/// `E[kappa_T (sum f dt + g(X_T))]` over base-Poisson bundles.
pub fn randomized_gain_reweighted(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    nu: &dyn IntensityField,
    n_paths: usize,
    seed: u64,
) -> Result<RandomizedGain> {
    reweighted_functional(spec, grid, nu, n_paths, seed, &|st: &StatePath| path_functional(spec, st))
}

/// Path functional of the state and the action trace.
pub type PathFunctional<'a> = dyn Fn(&StatePath) -> Result<f64> + Sync + 'a;

fn reweighted_functional(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    nu: &dyn IntensityField,
    n_paths: usize,
    seed: u64,
    functional: &PathFunctional<'_>,
) -> Result<RandomizedGain> {
    if n_paths == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let sampler = PoissonSampler::new(&spec.actions)?;
    let rows: Vec<(f64, f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let b = simulate_base_bundle(spec, grid, &sampler, Some(nu), seed, p)?;
            let k = b.terminal_weight();
            Ok((k * functional(&b.state)?, k, k * b.mpp.len() as f64))
        })
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let weights: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let jumps: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let weight_cv = coefficient_of_variation(&weights);
    if weight_cv > WEIGHT_CV_WARNING {
        warn!(
            "weight coefficient of variation {weight_cv:.2} exceeds {WEIGHT_CV_WARNING} for {}; reweighted estimate is unreliable",
            nu.name()
        );
    }
    Ok(RandomizedGain {
        estimate: Estimate::from_samples(&vals),
        estimator: Estimator::Reweighted,
        weight_mean: Estimate::from_samples(&weights).mean,
        weight_cv,
        mean_jumps: Estimate::from_samples(&jumps).mean,
    })
}

/// Plain average of the gain over time-changed bundles.
pub fn randomized_gain_direct(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    nu: &dyn IntensityField,
    n_paths: usize,
    seed: u64,
) -> Result<RandomizedGain> {
    direct_functional(spec, grid, nu, n_paths, seed, &|st: &StatePath| path_functional(spec, st))
}

fn direct_functional(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    nu: &dyn IntensityField,
    n_paths: usize,
    seed: u64,
    functional: &PathFunctional<'_>,
) -> Result<RandomizedGain> {
    if n_paths == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let sampler = PoissonSampler::new(&spec.actions)?;
    let rows: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let b = simulate_time_changed_bundle(spec, grid, &sampler, nu, seed, p)?;
            Ok((functional(&b.state)?, b.mpp.len() as f64))
        })
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let jumps: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(RandomizedGain {
        estimate: Estimate::from_samples(&vals),
        estimator: Estimator::Direct,
        weight_mean: 1.0,
        weight_cv: 0.0,
        mean_jumps: Estimate::from_samples(&jumps).mean,
    })
}

pub fn randomized_gain(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    nu: &dyn IntensityField,
    n_paths: usize,
    seed: u64,
    estimator: Estimator,
) -> Result<RandomizedGain> {
    randomized_functional(spec, grid, nu, n_paths, seed, estimator, &|st: &StatePath| {
        path_functional(spec, st)
    })
}

/// `E^nu[functional]` with the chosen estimator.
pub fn randomized_functional(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    nu: &dyn IntensityField,
    n_paths: usize,
    seed: u64,
    estimator: Estimator,
    functional: &PathFunctional<'_>,
) -> Result<RandomizedGain> {
    match estimator {
        Estimator::Reweighted => reweighted_functional(spec, grid, nu, n_paths, seed, functional),
        Estimator::Direct => direct_functional(spec, grid, nu, n_paths, seed, functional),
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeConfig {
    /// Maximum number of gain evaluations.
    pub budget: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub max_sweeps: usize,
}

impl OptimizeConfig {
    pub fn new(budget: usize, n_paths: usize, seed: u64, estimator: Estimator) -> Self {
        OptimizeConfig {
            budget,
            n_paths,
            seed,
            estimator,
            max_sweeps: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub theta: Vec<f64>,
    pub gain: RandomizedGain,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationResult {
    pub theta: Vec<f64>,
    pub gain: RandomizedGain,
    pub trace: Vec<TraceEntry>,
    pub budget_exhausted: bool,
}

/// Coordinate-ascent grid search over `theta` with common random numbers: every
/// candidate is evaluated on the same seed, so comparisons are nearly noiseless.
pub fn optimize_intensity(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    family: &dyn IntensityFamily,
    cfg: &OptimizeConfig,
) -> Result<OptimizationResult> {
    optimize_functional(spec, grid, family, cfg, &|st: &StatePath| path_functional(spec, st))
}

/// [`optimize_intensity`] for an arbitrary path functional.
pub fn optimize_functional(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    family: &dyn IntensityFamily,
    cfg: &OptimizeConfig,
    functional: &PathFunctional<'_>,
) -> Result<OptimizationResult> {
    if cfg.budget == 0 {
        return Err(Error::invalid("budget", "must allow at least one evaluation"));
    }
    let grids = family.grids();
    let mut cache: BTreeMap<Vec<u64>, RandomizedGain> = BTreeMap::new();
    let mut trace = Vec::new();
    let mut exhausted = false;
    let mut eval = |theta: &[f64], trace: &mut Vec<TraceEntry>| -> Result<Option<RandomizedGain>> {
        let key: Vec<u64> = theta.iter().map(|v| v.to_bits()).collect();
        if let Some(g) = cache.get(&key) {
            return Ok(Some(*g));
        }
        if trace.len() >= cfg.budget {
            return Ok(None);
        }
        let nu = family.build(theta)?;
        let g = randomized_functional(spec, grid, nu.as_ref(), cfg.n_paths, cfg.seed, cfg.estimator, functional)?;
        cache.insert(key, g);
        trace.push(TraceEntry {
            theta: theta.to_vec(),
            gain: g,
        });
        Ok(Some(g))
    };
    let mut theta = family.initial();
    let mut best = eval(&theta, &mut trace)?.expect("budget allows one evaluation");
    'sweeps: for _ in 0..cfg.max_sweeps {
        let mut improved = false;
        for (c, values) in grids.iter().enumerate() {
            for &v in values {
                let mut cand = theta.clone();
                cand[c] = v;
                match eval(&cand, &mut trace)? {
                    Some(g) if g.estimate.mean > best.estimate.mean => {
                        best = g;
                        theta = cand;
                        improved = true;
                    }
                    Some(_) => {}
                    None => {
                        exhausted = true;
                        break 'sweeps;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(OptimizationResult {
        theta,
        gain: best,
        trace,
        budget_exhausted: exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{ActionSpace, FiniteActions};
    use crate::intensity::{ConstantFamily, ConstantIntensity};
    use crate::problem::ScalarCoefficients;

    fn spec() -> ProblemSpec {
        let acts =
            FiniteActions::new(ActionSpace::finite(vec![-1.0, 1.0], vec![1.0, 1.0], -1.0).unwrap()).unwrap();
        let c = ScalarCoefficients::new(|_, _, a| a, |_, _, _| 0.2, |_, x, _| -x * x, |x| -x.abs());
        ProblemSpec::scalar("t", c, acts, 1.0, 0.2).unwrap()
    }

    #[test]
    fn unit_intensity_estimators_coincide() {
        let s = spec();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let a = randomized_gain_reweighted(&s, &grid, &ConstantIntensity(1.0), 500, 3).unwrap();
        let b = randomized_gain_direct(&s, &grid, &ConstantIntensity(1.0), 500, 3).unwrap();
        assert!((a.estimate.mean - b.estimate.mean).abs() < 1e-9);
        assert_eq!(a.weight_mean, 1.0);
    }

    #[test]
    fn single_member_family() {
        let s = spec();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let fam = ConstantFamily { values: vec![1.0] };
        let r = optimize_intensity(&s, &grid, &fam, &OptimizeConfig::new(5, 200, 1, Estimator::Reweighted)).unwrap();
        let direct = randomized_gain_reweighted(&s, &grid, &ConstantIntensity(1.0), 200, 1).unwrap();
        assert_eq!(r.theta, vec![1.0]);
        assert_eq!(r.gain.estimate.mean, direct.estimate.mean);
        assert!(!r.budget_exhausted);
    }

    #[test]
    fn budget_flag() {
        let s = spec();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let fam = ConstantFamily {
            values: vec![0.5, 1.0, 2.0, 4.0],
        };
        let r = optimize_intensity(&s, &grid, &fam, &OptimizeConfig::new(2, 50, 1, Estimator::Direct)).unwrap();
        assert!(r.budget_exhausted);
        assert_eq!(r.trace.len(), 2);
    }
}
