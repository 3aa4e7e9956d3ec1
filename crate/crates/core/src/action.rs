//! Action spaces, their intensity measures, and the lift of an atomic measure to
//! a nonatomic measure on the real line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite action space with a strictly positive intensity measure, or an interval
/// with a uniform density (discretized before any simulation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActionSpace {
    Finite {
        marks: Vec<f64>,
        weights: Vec<f64>,
        a0: f64,
    },
    Interval {
        lo: f64,
        hi: f64,
        density: f64,
        a0: f64,
    },
}

impl ActionSpace {
    pub fn finite(marks: Vec<f64>, weights: Vec<f64>, a0: f64) -> Result<Self> {
        let s = ActionSpace::Finite { marks, weights, a0 };
        s.validate()?;
        Ok(s)
    }

    pub fn interval(lo: f64, hi: f64, density: f64, a0: f64) -> Result<Self> {
        let s = ActionSpace::Interval { lo, hi, density, a0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActionSpace::Finite { marks, weights, a0 } => {
                if marks.is_empty() {
                    return Err(Error::InvalidActionSpace("no marks".into()));
                }
                if marks.len() != weights.len() {
                    return Err(Error::InvalidActionSpace(format!(
                        "{} marks but {} weights",
                        marks.len(),
                        weights.len()
                    )));
                }
                if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
                    return Err(Error::InvalidActionSpace(format!(
                        "weight {w} is not strictly positive and finite (full support required)"
                    )));
                }
                if marks.iter().any(|m| !m.is_finite()) {
                    return Err(Error::InvalidActionSpace("non-finite mark".into()));
                }
                for (i, m) in marks.iter().enumerate() {
                    if marks[..i].contains(m) {
                        return Err(Error::InvalidActionSpace(format!("duplicate mark {m}")));
                    }
                }
                if !marks.contains(a0) {
                    return Err(Error::InvalidActionSpace(format!("a0 = {a0} is not a mark")));
                }
                Ok(())
            }
            ActionSpace::Interval { lo, hi, density, a0 } => {
                if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidActionSpace(format!("bad interval [{lo}, {hi}]")));
                }
                if !(*density > 0.0 && density.is_finite()) {
                    return Err(Error::InvalidActionSpace(format!("density {density} must be positive")));
                }
                if a0 < lo || a0 > hi {
                    return Err(Error::InvalidActionSpace(format!("a0 = {a0} outside [{lo}, {hi}]")));
                }
                Ok(())
            }
        }
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            ActionSpace::Finite { weights, .. } => weights.iter().sum(),
            ActionSpace::Interval { lo, hi, density, .. } => (hi - lo) * density,
        }
    }

    pub fn a0(&self) -> f64 {
        match self {
            ActionSpace::Finite { a0, .. } | ActionSpace::Interval { a0, .. } => *a0,
        }
    }

    /// Replace an interval space by `cells` equal cells carrying the cell masses,
    /// marks at cell midpoints; a0 snaps to the nearest midpoint. Finite spaces are
    /// returned unchanged.
    pub fn discretize(&self, cells: usize) -> Result<FiniteActions> {
        match self {
            ActionSpace::Finite { .. } => FiniteActions::new(self.clone()),
            ActionSpace::Interval { lo, hi, density, a0 } => {
                if cells == 0 {
                    return Err(Error::invalid("cells", "need at least one cell"));
                }
                let h = (hi - lo) / cells as f64;
                let marks: Vec<f64> = (0..cells).map(|i| lo + (i as f64 + 0.5) * h).collect();
                let weights = vec![density * h; cells];
                let nearest = marks
                    .iter()
                    .copied()
                    .min_by(|a, b| (a - a0).abs().total_cmp(&(b - a0).abs()))
                    .unwrap();
                FiniteActions::new(ActionSpace::Finite {
                    marks,
                    weights,
                    a0: nearest,
                })
            }
        }
    }

    pub fn lift(&self) -> Result<LiftedMeasure> {
        lift_measure(self)
    }
}

/// A validated finite action space; marks are addressed by index everywhere in
/// the simulation code.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteActions {
    marks: Vec<f64>,
    weights: Vec<f64>,
    a0_index: usize,
    total: f64,
}

impl FiniteActions {
    pub fn new(space: ActionSpace) -> Result<Self> {
        space.validate()?;
        match space {
            ActionSpace::Finite { marks, weights, a0 } => {
                let a0_index = marks.iter().position(|m| *m == a0).unwrap();
                let total = weights.iter().sum();
                Ok(FiniteActions {
                    marks,
                    weights,
                    a0_index,
                    total,
                })
            }
            other @ ActionSpace::Interval { .. } => other.discretize(16),
        }
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn mark(&self, i: usize) -> f64 {
        self.marks[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn a0_index(&self) -> usize {
        self.a0_index
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.marks.iter().position(|m| *m == value)
    }

    /// Discrete metric scaled below one: rho(a, b) = 1/2 for a != b.
    pub fn rho(&self, a: usize, b: usize) -> f64 {
        if a == b {
            0.0
        } else {
            0.5
        }
    }

    /// Indices of marks in the open rho-ball of radius `r` around `center`.
    pub fn ball(&self, center: usize, r: f64) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.rho(center, j) < r).collect()
    }

    pub fn to_space(&self) -> ActionSpace {
        ActionSpace::Finite {
            marks: self.marks.clone(),
            weights: self.weights.clone(),
            a0: self.marks[self.a0_index],
        }
    }
}

/// Lift of an action-space measure to a nonatomic measure on the real line.
///
/// Atom `j` (in mark order) owns the half-open interval `I_j` of `(-inf, 0]`,
/// `I_0 = (-inf, -(m-1)]` and `I_j = (-(m-j), -(m-j-1)]` for `j >= 1`, and carries
/// its mass as a uniform density on the unit cell `(-(m-j), -(m-j-1)]` (for `I_0`
/// the cell `(-m, -(m-1)]`). An interval part is transported to `(0, hi-lo]` by
/// the shift `r -> lo + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMeasure {
    atom_marks: Vec<f64>,
    atom_weights: Vec<f64>,
    interval: Option<(f64, f64, f64)>,
    total: f64,
}

pub fn lift_measure(space: &ActionSpace) -> Result<LiftedMeasure> {
    space.validate()?;
    Ok(match space {
        ActionSpace::Finite { marks, weights, .. } => LiftedMeasure {
            atom_marks: marks.clone(),
            atom_weights: weights.clone(),
            interval: None,
            total: weights.iter().sum(),
        },
        ActionSpace::Interval { lo, hi, density, .. } => LiftedMeasure {
            atom_marks: vec![],
            atom_weights: vec![],
            interval: Some((*lo, *hi, *density)),
            total: (hi - lo) * density,
        },
    })
}

impl LiftedMeasure {
    pub fn n_atoms(&self) -> usize {
        self.atom_marks.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// Half-open interval `(left, right]` assigned to atom `j`.
    pub fn atom_interval(&self, j: usize) -> (f64, f64) {
        let m = self.n_atoms() as f64;
        let right = -(m - j as f64 - 1.0);
        let left = if j == 0 { f64::NEG_INFINITY } else { right - 1.0 };
        (left, right)
    }

    fn atom_cell(&self, j: usize) -> (f64, f64) {
        let m = self.n_atoms() as f64;
        let right = -(m - j as f64 - 1.0);
        (right - 1.0, right)
    }

    /// Index of the atom whose interval contains `r` (None on the interval part).
    pub fn atom_of(&self, r: f64) -> Option<usize> {
        if r > 0.0 || self.n_atoms() == 0 {
            return None;
        }
        (0..self.n_atoms()).find(|&j| {
            let (l, rr) = self.atom_interval(j);
            r > l && r <= rr
        })
    }

    /// Projection to an action label.
    pub fn project(&self, r: f64) -> f64 {
        match self.atom_of(r) {
            Some(j) => self.atom_marks[j],
            None => match self.interval {
                Some((lo, hi, _)) => (lo + r.max(0.0)).min(hi),
                None => *self.atom_marks.last().unwrap(),
            },
        }
    }

    /// Lifted measure of `(a, b]`.
    pub fn measure(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        for j in 0..self.n_atoms() {
            let (l, r) = self.atom_cell(j);
            let overlap = (b.min(r) - a.max(l)).max(0.0);
            total += self.atom_weights[j] * overlap;
        }
        if let Some((lo, hi, density)) = self.interval {
            let overlap = (b.min(hi - lo) - a.max(0.0)).max(0.0);
            total += density * overlap;
        }
        total
    }

    /// Mass of the preimage of atom `j` under the projection.
    pub fn preimage_mass(&self, j: usize) -> f64 {
        let (l, r) = self.atom_interval(j);
        self.measure(l.max(-(self.n_atoms() as f64) - 1.0), r)
    }

    /// Normalized cumulative distribution function of the lifted measure.
    pub fn cdf(&self, b: f64) -> f64 {
        let lower = -(self.n_atoms() as f64) - 1.0;
        (self.measure(lower, b) / self.total).clamp(0.0, 1.0)
    }

    /// Inverse of [`cdf`](Self::cdf) for `u` in (0, 1).
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        self.inverse_weighted_cdf(u, |_| 1.0)
    }

    /// Inverse of the CDF of `tilt(atom) * lifted(dr)`, normalized. The tilt is
    /// constant on each atom interval, so the CDF is piecewise linear and the
    /// inverse is closed form. Only used for atomic lifts.
    pub fn inverse_weighted_cdf(&self, u: f64, tilt: impl Fn(usize) -> f64) -> f64 {
        if self.n_atoms() == 0 {
            let (lo, hi, _) = self.interval.unwrap();
            return u * (hi - lo);
        }
        let masses: Vec<f64> = (0..self.n_atoms())
            .map(|j| tilt(j) * self.atom_weights[j])
            .collect();
        let total: f64 = masses.iter().sum();
        let target = u * total;
        let mut acc = 0.0;
        for (j, m) in masses.iter().enumerate() {
            if target <= acc + m || j + 1 == masses.len() {
                let frac = ((target - acc) / m).clamp(0.0, 1.0);
                let (l, _) = self.atom_cell(j);
                return l + frac;
            }
            acc += m;
        }
        unreachable!()
    }

    pub fn atom_marks(&self) -> &[f64] {
        &self.atom_marks
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::split_stream;

    #[test]
    fn rejects_zero_weight() {
        assert!(ActionSpace::finite(vec![0.0, 1.0], vec![1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn rejects_foreign_anchor() {
        assert!(ActionSpace::finite(vec![0.0, 1.0], vec![1.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn lift_preserves_atom_weights_exactly() {
        let s = ActionSpace::finite(vec![-1.0, 1.0], vec![1.0, 3.0], -1.0).unwrap();
        let l = s.lift().unwrap();
        assert_eq!(l.preimage_mass(0), 1.0);
        assert_eq!(l.preimage_mass(1), 3.0);
        assert_eq!(l.project(-1.5), -1.0);
        assert_eq!(l.project(-0.5), 1.0);
        assert_eq!(l.project(-50.0), -1.0);
    }

    #[test]
    fn lifted_singletons_are_null() {
        let s = ActionSpace::finite(vec![-1.0, 0.0, 1.0], vec![0.5, 1.0, 2.0], 0.0).unwrap();
        let l = s.lift().unwrap();
        let mut st = split_stream(3, 0);
        for _ in 0..100 {
            let r = -4.0 + 5.0 * st.uniform();
            assert_eq!(l.measure(r, r), 0.0);
        }
    }

    #[test]
    fn interval_lift_carries_total_mass() {
        let s = ActionSpace::interval(0.0, 1.0, 2.0, 0.0).unwrap();
        let l = s.lift().unwrap();
        assert_eq!(l.measure(0.0, f64::INFINITY), 2.0);
        assert_eq!(l.measure(f64::NEG_INFINITY, 0.0), 0.0);
        assert!((l.project(0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cdf_inverse_round_trip() {
        let s = ActionSpace::finite(vec![-1.0, 0.0, 1.0], vec![0.5, 1.0, 2.0], 0.0).unwrap();
        let l = s.lift().unwrap();
        for k in 1..100 {
            let u = k as f64 / 100.0;
            let r = l.inverse_cdf(u);
            assert!((l.cdf(r) - u).abs() < 1e-12);
        }
    }

    #[test]
    fn discretized_interval_keeps_mass() {
        let s = ActionSpace::interval(-1.0, 1.0, 1.5, 0.1).unwrap();
        let f = s.discretize(8).unwrap();
        assert!((f.total_mass() - 3.0).abs() < 1e-12);
        assert_eq!(f.len(), 8);
        assert!((f.mark(f.a0_index()) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn discrete_metric_balls() {
        let f = FiniteActions::new(ActionSpace::finite(vec![1.0, 2.0, 3.0], vec![1.0; 3], 1.0).unwrap()).unwrap();
        assert_eq!(f.ball(1, 1.0), vec![0, 1, 2]);
        assert_eq!(f.ball(1, 0.5), vec![1]);
    }
}
