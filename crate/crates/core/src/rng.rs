//! Splittable random streams, time grids and Brownian increments.
//!
//! Every Monte-Carlo path owns an [`RngStream`] keyed on `(master_seed, path_index)`.
//! The generator is ChaCha8 with the path index as its stream id, so the streams
//! are counter-based and never share state: a batch can be scheduled on any number
//! of workers in any order and replay bit-for-bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sub-stream tags. A path draws its Brownian increments, its Poisson marks and
/// any auxiliary randomness from disjoint sub-streams of the same path index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Brownian = 0,
    Poisson = 1,
    Auxiliary = 2,
    Pilot = 3,
}

#[derive(Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl std::fmt::Debug for RngStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RngStream")
            .field("master_seed", &self.master_seed)
            .field("stream_index", &self.stream_index)
            .finish()
    }
}

/// Deterministic stream for one Monte-Carlo path.
pub fn split_stream(master_seed: u64, path_index: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(path_index);
    RngStream {
        master_seed,
        stream_index: path_index,
        rng,
        spare_normal: None,
    }
}

/// Stream for `path_index` restricted to one purpose. Purposes occupy the top two
/// bits of the stream id, so path indices below 2^62 never collide.
pub fn path_stream(master_seed: u64, path_index: u64, purpose: Purpose) -> RngStream {
    split_stream(master_seed, ((purpose as u64) << 62) | path_index)
}

impl RngStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on the open interval (0, 1), 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        loop {
            let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Exponential variate with the given rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform().ln() / rate
    }

    /// Standard normal via the Box-Muller transform; the second variate of each
    /// pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Index drawn with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let target = self.uniform() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return i;
            }
        }
        weights.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_start: f64,
    t_end: f64,
    n_steps: usize,
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::EmptyGrid);
        }
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::invalid(
                "t_end",
                format!("need finite t_start < t_end, got [{t_start}, {t_end}]"),
            ));
        }
        let dt = (t_end - t_start) / n_steps as f64;
        let mut points: Vec<f64> = (0..=n_steps).map(|i| t_start + i as f64 * dt).collect();
        points[n_steps] = t_end;
        Ok(TimeGrid {
            t_start,
            t_end,
            n_steps,
            points,
        })
    }

    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        Self::new(0.0, horizon, n_steps)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn time(&self, i: usize) -> f64 {
        self.points[i]
    }

    /// Index `i` of the interval `(t_i, t_{i+1}]` containing `t`; times at or
    /// before `t_start` map to interval 0.
    pub fn interval_of(&self, t: f64) -> usize {
        if t <= self.t_start {
            return 0;
        }
        let raw = ((t - self.t_start) / self.dt()).ceil() as usize;
        let mut i = raw.saturating_sub(1).min(self.n_steps - 1);
        // guard against rounding at the interval edges
        while i > 0 && t <= self.points[i] {
            i -= 1;
        }
        while i + 1 < self.n_steps && t > self.points[i + 1] {
            i += 1;
        }
        i
    }
}

/// Increments of a d-dimensional Brownian motion on a grid, stored row-major
/// (`increments[i * dim + k]` is component `k` over interval `i`).
#[derive(Debug, Clone)]
pub struct BrownianPath {
    pub grid: TimeGrid,
    pub dim: usize,
    pub increments: Vec<f64>,
}

impl BrownianPath {
    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.dim..(i + 1) * self.dim]
    }

    /// W at the terminal time (sum of increments).
    pub fn terminal(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for i in 0..self.grid.n_steps() {
            for (wk, dk) in w.iter_mut().zip(self.increment(i)) {
                *wk += dk;
            }
        }
        w
    }
}

pub fn sample_brownian(grid: &TimeGrid, d: usize, stream: &mut RngStream) -> Result<BrownianPath> {
    if d == 0 {
        return Err(Error::invalid("d", "Brownian dimension must be at least 1"));
    }
    if grid.n_steps() == 0 {
        return Err(Error::EmptyGrid);
    }
    let sd = grid.dt().sqrt();
    let increments = (0..grid.n_steps() * d).map(|_| sd * stream.normal()).collect();
    Ok(BrownianPath {
        grid: grid.clone(),
        dim: d,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_is_identical() {
        let mut a = split_stream(7, 0);
        let mut b = split_stream(7, 0);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn seed_changes_first_draw() {
        assert_ne!(split_stream(7, 0).next_u64(), split_stream(8, 0).next_u64());
    }

    #[test]
    fn neighbouring_streams_uncorrelated() {
        let n = 100_000;
        let mut a = split_stream(7, 0);
        let mut b = split_stream(7, 1);
        let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.uniform();
            let y = b.uniform();
            sa += x;
            sb += y;
            sab += x * y;
            saa += x * x;
            sbb += y * y;
        }
        let nf = n as f64;
        let cov = sab / nf - sa * sb / nf / nf;
        let corr = cov / ((saa / nf - (sa / nf).powi(2)) * (sbb / nf - (sb / nf).powi(2))).sqrt();
        assert!(corr.abs() < 3.0 / nf.sqrt(), "corr = {corr}");
    }

    #[test]
    fn purposes_are_distinct_streams() {
        let a = path_stream(1, 5, Purpose::Brownian).next_u64();
        let b = path_stream(1, 5, Purpose::Poisson).next_u64();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(matches!(TimeGrid::uniform(1.0, 0), Err(Error::EmptyGrid)));
    }

    #[test]
    fn grid_points_and_intervals() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        assert_eq!(g.points().len(), 11);
        assert_eq!(g.time(10), 1.0);
        assert_eq!(g.interval_of(0.0), 0);
        assert_eq!(g.interval_of(0.1), 0);
        assert_eq!(g.interval_of(0.1000001), 1);
        assert_eq!(g.interval_of(1.0), 9);
        for w in g.points().windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn brownian_increment_moments() {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let n = 100_000;
        let mut s = 0.0;
        let mut s2 = 0.0;
        let mut cross = 0.0;
        for p in 0..n {
            let mut st = split_stream(11, p);
            let w = sample_brownian(&grid, 2, &mut st).unwrap();
            let d = w.increment(0);
            s += d[0];
            s2 += d[0] * d[0];
            cross += d[0] * d[1];
        }
        let nf = n as f64;
        let mean = s / nf;
        assert!(mean.abs() < 3.0 * (1.0 / nf).sqrt(), "mean {mean}");
        let var = s2 / nf - mean * mean;
        // SE of the variance of a unit normal is sqrt(2/n)
        assert!((var - 1.0).abs() < 3.0 * (2.0 / nf).sqrt(), "var {var}");
        let cov = cross / nf;
        assert!(cov.abs() < 3.0 / nf.sqrt(), "cov {cov}");
    }

    #[test]
    fn zero_dimension_rejected() {
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let mut st = split_stream(0, 0);
        assert!(sample_brownian(&grid, 0, &mut st).is_err());
    }
}
