//! The original control problem: gains of feedback controls, the Krylov-type
//! distance between controls and brute-force search over simple controls.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::rng::{path_stream, sample_brownian, Purpose, TimeGrid};
use crate::sde::{path_functional, simulate_controlled, Control, EulerStepper, FeedbackControl};
use crate::stats::Estimate;

/// Piecewise-constant feedback control: on each subdivision interval, a table
/// from the bin of the first state coordinate to an action index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimpleControl {
    /// `0 = s_0 < ... < s_N = T`.
    pub subdivision: Vec<f64>,
    /// Sorted interior bin edges; `edges.len() + 1` bins.
    pub bin_edges: Vec<f64>,
    /// `table[k * bins + j]` is the action on interval `k` in bin `j`.
    pub table: Vec<usize>,
}

impl SimpleControl {
    pub fn new(subdivision: Vec<f64>, bin_edges: Vec<f64>, table: Vec<usize>) -> Result<Self> {
        if subdivision.len() < 2 || subdivision.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("subdivision", "need N >= 1 increasing intervals"));
        }
        if bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("bin_edges", "edges must increase"));
        }
        if table.len() != (subdivision.len() - 1) * (bin_edges.len() + 1) {
            return Err(Error::invalid("table", "size must be intervals x bins"));
        }
        Ok(SimpleControl {
            subdivision,
            bin_edges,
            table,
        })
    }

    pub fn constant(horizon: f64, action: usize) -> Self {
        SimpleControl {
            subdivision: vec![0.0, horizon],
            bin_edges: Vec::new(),
            table: vec![action],
        }
    }

    pub fn bins(&self) -> usize {
        self.bin_edges.len() + 1
    }

    pub fn intervals(&self) -> usize {
        self.subdivision.len() - 1
    }

    pub fn bin_of(&self, x: f64) -> usize {
        self.bin_edges.partition_point(|&e| e <= x)
    }

    pub fn interval_of(&self, t: f64) -> usize {
        self.subdivision
            .partition_point(|&s| s <= t)
            .saturating_sub(1)
            .min(self.intervals() - 1)
    }
}

impl FeedbackControl for SimpleControl {
    fn action(&self, t: f64, x: &[f64]) -> usize {
        self.table[self.interval_of(t) * self.bins() + self.bin_of(x[0])]
    }
}

/// Monte-Carlo estimate of `J(alpha)` for a feedback control.
pub fn gain(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    control: &dyn FeedbackControl,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    if n_paths == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let w = sample_brownian(grid, spec.dim_w, &mut path_stream(seed, p, Purpose::Brownian))?;
            let path = simulate_controlled(spec, Control::Feedback(control), &w)?;
            path_functional(spec, &path)
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// `E int_0^T rho(alpha1_t, alpha2_t) dt`, each control driving its own state
/// under common Brownian paths.
pub fn control_distance(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    alpha1: &dyn FeedbackControl,
    alpha2: &dyn FeedbackControl,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    if n_paths == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let dt = grid.dt();
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let w = sample_brownian(grid, spec.dim_w, &mut path_stream(seed, p, Purpose::Brownian))?;
            let p1 = simulate_controlled(spec, Control::Feedback(alpha1), &w)?;
            let p2 = simulate_controlled(spec, Control::Feedback(alpha2), &w)?;
            Ok(p1
                .control_trace
                .iter()
                .zip(&p2.control_trace)
                .map(|(a, b)| spec.actions.rho(*a, *b) * dt)
                .sum())
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&samples))
}

#[derive(Debug, Clone)]
pub struct BruteConfig {
    /// Number of subdivision intervals `N`; must divide the grid's step count.
    pub subdivisions: usize,
    pub bin_edges: Vec<f64>,
    /// Admissible action indices.
    pub action_grid: Vec<usize>,
    pub n_paths: usize,
    pub seed: u64,
    /// Largest family enumerated exhaustively.
    pub cap: usize,
    /// Allow dynamic programming over bin centres when the family is too large.
    pub backward: bool,
    /// Paths per (interval, bin, action) in backward mode.
    pub pilot_paths: usize,
}

impl BruteConfig {
    pub fn new(subdivisions: usize, bin_edges: Vec<f64>, action_grid: Vec<usize>, n_paths: usize, seed: u64) -> Self {
        BruteConfig {
            subdivisions,
            bin_edges,
            action_grid,
            n_paths,
            seed,
            cap: 4096,
            backward: false,
            pilot_paths: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BruteMode {
    Enumerate,
    Backward,
}

#[derive(Debug, Clone)]
pub struct BruteResult {
    pub value: Estimate,
    pub policy: SimpleControl,
    /// `(policy_id, gain)` for every evaluated policy.
    pub candidates: Vec<(u64, Estimate)>,
    pub mode: BruteMode,
    /// Dynamic-programming value at `x0` (backward mode only).
    pub dp_value: Option<f64>,
}

/// Maximal gain over simple feedback controls, by enumeration or by backward
/// induction over bin centres. The reported value is always a forward
/// Monte-Carlo evaluation of the selected policy.
pub fn value_brute_force(spec: &ProblemSpec, grid: &TimeGrid, cfg: &BruteConfig) -> Result<BruteResult> {
    if cfg.subdivisions == 0 || !grid.n_steps().is_multiple_of(cfg.subdivisions) {
        return Err(Error::invalid(
            "subdivisions",
            format!("{} must be positive and divide {} grid steps", cfg.subdivisions, grid.n_steps()),
        ));
    }
    if cfg.action_grid.is_empty() || cfg.action_grid.iter().any(|&a| a >= spec.actions.len()) {
        return Err(Error::invalid("action_grid", "needs valid action indices"));
    }
    let subdivision: Vec<f64> = (0..=cfg.subdivisions)
        .map(|k| grid.time(k * grid.n_steps() / cfg.subdivisions))
        .collect();
    let bins = cfg.bin_edges.len() + 1;
    let slots = cfg.subdivisions * bins;
    let size = (cfg.action_grid.len() as f64).powi(slots as i32);
    if size <= cfg.cap as f64 {
        let mut candidates = Vec::with_capacity(size as usize);
        let mut best: Option<(Estimate, SimpleControl)> = None;
        for id in 0..size as u64 {
            let mut code = id;
            let table = (0..slots)
                .map(|_| {
                    let a = cfg.action_grid[(code % cfg.action_grid.len() as u64) as usize];
                    code /= cfg.action_grid.len() as u64;
                    a
                })
                .collect();
            let policy = SimpleControl::new(subdivision.clone(), cfg.bin_edges.clone(), table)?;
            let est = gain(spec, grid, &policy, cfg.n_paths, cfg.seed)?;
            candidates.push((id, est));
            if best.as_ref().is_none_or(|(b, _)| est.mean > b.mean) {
                best = Some((est, policy));
            }
        }
        let (value, policy) = best.unwrap();
        return Ok(BruteResult {
            value,
            policy,
            candidates,
            mode: BruteMode::Enumerate,
            dp_value: None,
        });
    }
    if !cfg.backward {
        return Err(Error::SearchSpaceTooLarge { size, cap: cfg.cap });
    }
    backward_induction(spec, grid, cfg, subdivision)
}

fn bin_centres(edges: &[f64]) -> Vec<f64> {
    match edges.len() {
        0 => vec![0.0],
        1 => vec![edges[0] - 0.5, edges[0] + 0.5],
        n => {
            let mut c = Vec::with_capacity(n + 1);
            c.push(edges[0] - 0.5 * (edges[1] - edges[0]));
            for w in edges.windows(2) {
                c.push(0.5 * (w[0] + w[1]));
            }
            c.push(edges[n - 1] + 0.5 * (edges[n - 1] - edges[n - 2]));
            c
        }
    }
}

/// Linear interpolation with flat extrapolation.
fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x);
    let w = (x - xs[j - 1]) / (xs[j] - xs[j - 1]);
    ys[j - 1] * (1.0 - w) + ys[j] * w
}

fn backward_induction(
    spec: &ProblemSpec,
    grid: &TimeGrid,
    cfg: &BruteConfig,
    subdivision: Vec<f64>,
) -> Result<BruteResult> {
    if spec.dim_x != 1 {
        return Err(Error::invalid("backward", "dynamic programming over bins needs a scalar state"));
    }
    let centres = bin_centres(&cfg.bin_edges);
    let bins = centres.len();
    let per = grid.n_steps() / cfg.subdivisions;
    let dt = grid.dt();
    let d = spec.dim_w;
    let pilots: Vec<Vec<f64>> = (0..cfg.pilot_paths as u64)
        .into_par_iter()
        .map(|p| Ok(sample_brownian(grid, d, &mut path_stream(cfg.seed, p, Purpose::Pilot))?.increments))
        .collect::<Result<_>>()?;
    let mut next_v: Option<Vec<f64>> = None;
    let mut table = vec![0usize; cfg.subdivisions * bins];
    for k in (0..cfg.subdivisions).rev() {
        let pairs: Vec<(usize, usize)> = (0..bins)
            .flat_map(|j| cfg.action_grid.iter().map(move |&a| (j, a)))
            .collect();
        let q: Vec<f64> = pairs
            .par_iter()
            .map(|&(j, a)| -> Result<f64> {
                let mut stepper = EulerStepper::new(spec);
                let mut vals = Vec::with_capacity(pilots.len());
                let mut out = [0.0];
                for inc in &pilots {
                    let mut x = [centres[j]];
                    let mut acc = 0.0;
                    for s in k * per..(k + 1) * per {
                        let t = grid.time(s);
                        acc += stepper.running(t, &x, a)? * dt;
                        stepper.step(t, &x, a, dt, &inc[s * d..(s + 1) * d], &mut out)?;
                        x = out;
                    }
                    acc += match &next_v {
                        Some(v) => interpolate(&centres, v, x[0]),
                        None => stepper.terminal(&x)?,
                    };
                    vals.push(acc);
                }
                Ok(Estimate::from_samples(&vals).mean)
            })
            .collect::<Result<_>>()?;
        let mut v = vec![f64::NEG_INFINITY; bins];
        for (idx, &(j, a)) in pairs.iter().enumerate() {
            if q[idx] > v[j] {
                v[j] = q[idx];
                table[k * bins + j] = a;
            }
        }
        next_v = Some(v);
    }
    let dp_value = interpolate(&centres, next_v.as_ref().unwrap(), spec.x0[0]);
    let policy = SimpleControl::new(subdivision, cfg.bin_edges.clone(), table)?;
    let value = gain(spec, grid, &policy, cfg.n_paths, cfg.seed)?;
    Ok(BruteResult {
        value,
        policy,
        candidates: vec![(0, value)],
        mode: BruteMode::Backward,
        dp_value: Some(dp_value),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{ActionSpace, FiniteActions};
    use crate::problem::ScalarCoefficients;
    use crate::sde::ConstantControl;

    fn acts() -> FiniteActions {
        FiniteActions::new(ActionSpace::finite(vec![-1.0, 1.0], vec![1.0, 1.0], -1.0).unwrap()).unwrap()
    }

    fn bangbang(x0: f64) -> ProblemSpec {
        let c = ScalarCoefficients::new(|_, _, a| a, |_, _, _| 0.0, |_, _, _| 0.0, |x| -x.abs());
        ProblemSpec::scalar("bb", c, acts(), 1.0, x0).unwrap()
    }

    #[test]
    fn constant_terminal_gain_is_exact() {
        let c = ScalarCoefficients::new(|_, x, _| x, |_, _, _| 0.3, |_, _, _| 0.0, |_| 1.0);
        let spec = ProblemSpec::scalar("c", c, acts(), 1.0, 0.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let e = gain(&spec, &grid, &ConstantControl(0), 1000, 1).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn distance_of_constants() {
        let spec = bangbang(0.0);
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let same = control_distance(&spec, &grid, &ConstantControl(0), &ConstantControl(0), 100, 0).unwrap();
        assert_eq!(same.mean, 0.0);
        let diff = control_distance(&spec, &grid, &ConstantControl(0), &ConstantControl(1), 100, 0).unwrap();
        assert!((diff.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_interval_two_actions_is_max_of_constants() {
        let spec = bangbang(0.3);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let r = value_brute_force(&spec, &grid, &BruteConfig::new(1, vec![], vec![0, 1], 10, 0)).unwrap();
        assert_eq!(r.candidates.len(), 2);
        let g0 = gain(&spec, &grid, &ConstantControl(0), 10, 0).unwrap().mean;
        let g1 = gain(&spec, &grid, &ConstantControl(1), 10, 0).unwrap().mean;
        assert_eq!(r.value.mean, g0.max(g1));
    }

    #[test]
    fn cap_enforced_without_backward() {
        let spec = bangbang(0.0);
        let grid = TimeGrid::uniform(1.0, 100).unwrap();
        let mut cfg = BruteConfig::new(10, vec![-0.5, 0.0, 0.5], vec![0, 1], 10, 0);
        cfg.cap = 100;
        assert!(matches!(
            value_brute_force(&spec, &grid, &cfg),
            Err(Error::SearchSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn simple_control_lookup() {
        let c = SimpleControl::new(vec![0.0, 0.5, 1.0], vec![0.0], vec![1, 0, 0, 1]).unwrap();
        assert_eq!(c.action(0.1, &[-1.0]), 1);
        assert_eq!(c.action(0.1, &[0.0]), 0);
        assert_eq!(c.action(0.7, &[2.0]), 1);
        assert_eq!(c.action(1.0, &[-2.0]), 0);
    }
}
