//! Bounded feedback intensities `nu(t, x, i, a)` and parametric families of them.
//!
//! `i` is the index of the current action (the value of the jump-control process
//! just before `t`), `a` the index of a candidate mark.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::action::FiniteActions;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub trait IntensityField: Send + Sync {
    fn evaluate(&self, t: f64, x: &[f64], current: usize, mark: usize) -> f64;

    /// Declared `(nu_min, nu_max)`; every value lies in `[nu_min, nu_max]`.
    fn bounds(&self) -> (f64, f64);

    fn parameters(&self) -> Vec<f64> {
        Vec::new()
    }

    fn name(&self) -> String {
        "intensity".to_string()
    }
}

impl<T: IntensityField + ?Sized> IntensityField for Arc<T> {
    fn evaluate(&self, t: f64, x: &[f64], current: usize, mark: usize) -> f64 {
        (**self).evaluate(t, x, current, mark)
    }
    fn bounds(&self) -> (f64, f64) {
        (**self).bounds()
    }
    fn parameters(&self) -> Vec<f64> {
        (**self).parameters()
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

impl<T: IntensityField + ?Sized> IntensityField for Box<T> {
    fn evaluate(&self, t: f64, x: &[f64], current: usize, mark: usize) -> f64 {
        (**self).evaluate(t, x, current, mark)
    }
    fn bounds(&self) -> (f64, f64) {
        (**self).bounds()
    }
    fn parameters(&self) -> Vec<f64> {
        (**self).parameters()
    }
    fn name(&self) -> String {
        (**self).name()
    }
}

/// Evaluate and check against the declared bounds.
pub fn checked(nu: &dyn IntensityField, t: f64, x: &[f64], current: usize, mark: usize) -> Result<f64> {
    let v = nu.evaluate(t, x, current, mark);
    let (lo, hi) = nu.bounds();
    let tol = 1e-12 * hi.abs().max(1.0);
    if !(v.is_finite() && v > 0.0 && v >= lo - tol && v <= hi + tol) {
        return Err(Error::IntensityBounds {
            value: v,
            nu_min: lo,
            nu_max: hi,
            t,
            current,
            mark,
        });
    }
    Ok(v)
}

/// Randomized probing of the declared bounds over `[0, horizon] x box x A x A`.
pub fn probe_bounds(
    nu: &dyn IntensityField,
    n_marks: usize,
    horizon: f64,
    state_box: &[(f64, f64)],
    probes: usize,
    stream: &mut RngStream,
) -> Result<()> {
    let (lo, hi) = nu.bounds();
    if !(lo > 0.0 && hi.is_finite() && lo <= hi) {
        return Err(Error::invalid(
            "nu",
            format!("declared bounds ({lo}, {hi}] must satisfy 0 < nu_min <= nu_max < inf"),
        ));
    }
    let mut x = vec![0.0; state_box.len()];
    for _ in 0..probes {
        let t = horizon * stream.uniform();
        for (xk, (a, b)) in x.iter_mut().zip(state_box) {
            *xk = a + (b - a) * stream.uniform();
        }
        let i = (stream.uniform() * n_marks as f64) as usize % n_marks;
        let a = (stream.uniform() * n_marks as f64) as usize % n_marks;
        checked(nu, t, &x, i, a)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantIntensity(pub f64);

impl IntensityField for ConstantIntensity {
    fn evaluate(&self, _t: f64, _x: &[f64], _i: usize, _a: usize) -> f64 {
        self.0
    }
    fn bounds(&self) -> (f64, f64) {
        (self.0, self.0)
    }
    fn parameters(&self) -> Vec<f64> {
        vec![self.0]
    }
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }
}

type NuFn = dyn Fn(f64, &[f64], usize, usize) -> f64 + Send + Sync;

/// Intensity given by a closure with declared bounds.
#[derive(Clone)]
pub struct FnIntensity {
    f: Arc<NuFn>,
    nu_min: f64,
    nu_max: f64,
    params: Vec<f64>,
    name: String,
}

impl FnIntensity {
    pub fn new(
        name: impl Into<String>,
        nu_min: f64,
        nu_max: f64,
        f: impl Fn(f64, &[f64], usize, usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FnIntensity {
            f: Arc::new(f),
            nu_min,
            nu_max,
            params: Vec::new(),
            name: name.into(),
        }
    }

    pub fn with_parameters(mut self, params: Vec<f64>) -> Self {
        self.params = params;
        self
    }
}

impl std::fmt::Debug for FnIntensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FnIntensity({}, [{}, {}])", self.name, self.nu_min, self.nu_max)
    }
}

impl IntensityField for FnIntensity {
    fn evaluate(&self, t: f64, x: &[f64], i: usize, a: usize) -> f64 {
        (self.f)(t, x, i, a)
    }
    fn bounds(&self) -> (f64, f64) {
        (self.nu_min, self.nu_max)
    }
    fn parameters(&self) -> Vec<f64> {
        self.params.clone()
    }
    fn name(&self) -> String {
        self.name.clone()
    }
}

/// `nu ∨ eps`.
pub struct Floored<N> {
    pub inner: N,
    pub floor: f64,
}

impl<N: IntensityField> IntensityField for Floored<N> {
    fn evaluate(&self, t: f64, x: &[f64], i: usize, a: usize) -> f64 {
        self.inner.evaluate(t, x, i, a).max(self.floor)
    }
    fn bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.inner.bounds();
        (lo.max(self.floor), hi.max(self.floor))
    }
    fn parameters(&self) -> Vec<f64> {
        self.inner.parameters()
    }
    fn name(&self) -> String {
        format!("{} v {}", self.inner.name(), self.floor)
    }
}

/// A parametric family `theta -> nu_theta` searched by coordinate ascent.
pub trait IntensityFamily: Send + Sync {
    fn name(&self) -> &str;

    /// Candidate values for each coordinate of theta.
    fn grids(&self) -> Vec<Vec<f64>>;

    fn initial(&self) -> Vec<f64> {
        self.grids().iter().map(|g| g[0]).collect()
    }

    fn build(&self, theta: &[f64]) -> Result<Arc<dyn IntensityField>>;

    fn bounds(&self) -> (f64, f64);
}

/// Geometric grid of `levels` values spanning `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, levels: usize) -> Vec<f64> {
    if levels <= 1 || hi <= lo {
        return vec![hi];
    }
    let r = (hi / lo).powf(1.0 / (levels - 1) as f64);
    let mut v: Vec<f64> = (0..levels).map(|k| lo * r.powi(k as i32)).collect();
    v[levels - 1] = hi;
    v
}

fn check_theta(theta: &[f64], len: usize, lo: f64, hi: f64) -> Result<()> {
    if theta.len() != len {
        return Err(Error::invalid("theta", format!("expected {len} parameters, got {}", theta.len())));
    }
    for t in theta {
        if !(*t >= lo - 1e-12 && *t <= hi + 1e-12) {
            return Err(Error::invalid("theta", format!("{t} outside [{lo}, {hi}]")));
        }
    }
    Ok(())
}

/// One-parameter family of constant intensities.
pub struct ConstantFamily {
    pub values: Vec<f64>,
}

impl IntensityFamily for ConstantFamily {
    fn name(&self) -> &str {
        "constant"
    }
    fn grids(&self) -> Vec<Vec<f64>> {
        vec![self.values.clone()]
    }
    fn build(&self, theta: &[f64]) -> Result<Arc<dyn IntensityField>> {
        let (lo, hi) = self.bounds();
        check_theta(theta, 1, lo, hi)?;
        Ok(Arc::new(ConstantIntensity(theta[0])))
    }
    fn bounds(&self) -> (f64, f64) {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Two-parameter sign-feedback family on a two-point action space `{-1, +1}`:
/// rate multiplier `theta[0]` toward the `+1` mark while `x < 0`, `theta[1]` toward
/// `-1` while `x >= 0`; every other (state, mark) pair gets `nu_min`.
pub struct SignFeedbackFamily {
    pub plus: usize,
    pub minus: usize,
    pub nu_min: f64,
    pub nu_max: f64,
    pub levels: usize,
}

impl SignFeedbackFamily {
    pub fn new(actions: &FiniteActions, nu_min: f64, nu_max: f64, levels: usize) -> Result<Self> {
        let plus = actions
            .index_of(1.0)
            .ok_or_else(|| Error::invalid("actions", "sign family needs mark +1"))?;
        let minus = actions
            .index_of(-1.0)
            .ok_or_else(|| Error::invalid("actions", "sign family needs mark -1"))?;
        Ok(SignFeedbackFamily {
            plus,
            minus,
            nu_min,
            nu_max,
            levels,
        })
    }
}

impl IntensityFamily for SignFeedbackFamily {
    fn name(&self) -> &str {
        "sign_feedback"
    }
    fn grids(&self) -> Vec<Vec<f64>> {
        let g = geometric_grid(1.0_f64.max(self.nu_min).min(self.nu_max), self.nu_max, self.levels);
        vec![g.clone(), g]
    }
    fn build(&self, theta: &[f64]) -> Result<Arc<dyn IntensityField>> {
        check_theta(theta, 2, self.nu_min, self.nu_max)?;
        let (up, down) = (theta[0], theta[1]);
        let (plus, minus, floor) = (self.plus, self.minus, self.nu_min);
        Ok(Arc::new(
            FnIntensity::new("sign_feedback", self.nu_min, self.nu_max, move |_t, x, _i, a| {
                if x[0] < 0.0 && a == plus {
                    up
                } else if x[0] >= 0.0 && a == minus {
                    down
                } else {
                    floor
                }
            })
            .with_parameters(theta.to_vec()),
        ))
    }
    fn bounds(&self) -> (f64, f64) {
        (self.nu_min, self.nu_max)
    }
}

/// Dead-zone feedback on an ordered action grid: the target mark is the largest
/// action when `x < -width`, the smallest when `x > width`, and the action closest
/// to zero in between. The target gets `rate`, every other mark `nu_min`.
/// `theta = [width, rate]`.
pub struct DeadZoneFamily {
    pub marks: Vec<f64>,
    pub widths: Vec<f64>,
    pub nu_min: f64,
    pub nu_max: f64,
    pub levels: usize,
}

impl IntensityFamily for DeadZoneFamily {
    fn name(&self) -> &str {
        "dead_zone"
    }
    fn grids(&self) -> Vec<Vec<f64>> {
        let rates = geometric_grid(1.0_f64.max(self.nu_min).min(self.nu_max), self.nu_max, self.levels);
        vec![self.widths.clone(), rates]
    }
    fn initial(&self) -> Vec<f64> {
        vec![self.widths[self.widths.len() / 2], self.nu_max]
    }
    fn build(&self, theta: &[f64]) -> Result<Arc<dyn IntensityField>> {
        if theta.len() != 2 {
            return Err(Error::invalid("theta", "dead-zone family takes [width, rate]"));
        }
        check_theta(&theta[1..], 1, self.nu_min, self.nu_max)?;
        let (width, rate) = (theta[0].abs(), theta[1]);
        let hi = argmax(&self.marks);
        let lo = argmin(&self.marks);
        let mid = self
            .marks
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        let floor = self.nu_min;
        Ok(Arc::new(
            FnIntensity::new("dead_zone", self.nu_min, self.nu_max, move |_t, x, _i, a| {
                let target = if x[0] > width {
                    lo
                } else if x[0] < -width {
                    hi
                } else {
                    mid
                };
                if a == target {
                    rate
                } else {
                    floor
                }
            })
            .with_parameters(theta.to_vec()),
        ))
    }
    fn bounds(&self) -> (f64, f64) {
        (self.nu_min, self.nu_max)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
}

/// Battery of bounded intensities used by the martingale and compensator checks:
/// constant, time-dependent, mark-dependent, current-action-dependent and
/// state-dependent members.
pub fn battery(n_marks: usize) -> Vec<Arc<dyn IntensityField>> {
    let tilt = move |a: usize| 0.6 + 0.9 * a as f64 / (n_marks.max(2) - 1) as f64;
    vec![
        Arc::new(ConstantIntensity(0.5)),
        Arc::new(FnIntensity::new("sine_time", 0.5, 1.5, |t, _x, _i, a| {
            1.0 + 0.5 * t.sin() * if a == 0 { 1.0 } else { 0.0 }
        })),
        Arc::new(FnIntensity::new("mark_tilt", 0.6, 1.5, move |_t, _x, _i, a| tilt(a))),
        Arc::new(FnIntensity::new("switch_boost", 0.7, 1.8, |_t, _x, i, a| {
            if i == a {
                0.7
            } else {
                1.8
            }
        })),
        Arc::new(FnIntensity::new("state_wave", 0.5, 1.5, |t, x, _i, a| {
            let s = x.first().copied().unwrap_or(0.0);
            1.0 + 0.5 * (2.0 * PI * t + s + a as f64).sin()
        })),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::ActionSpace;
    use crate::rng::split_stream;

    fn two_actions() -> FiniteActions {
        FiniteActions::new(ActionSpace::finite(vec![-1.0, 1.0], vec![1.0, 1.0], -1.0).unwrap()).unwrap()
    }

    #[test]
    fn battery_respects_declared_bounds() {
        let mut st = split_stream(1, 0);
        for nu in battery(2) {
            probe_bounds(nu.as_ref(), 2, 1.0, &[(-3.0, 3.0)], 2000, &mut st).unwrap();
        }
    }

    #[test]
    fn probe_catches_violation() {
        let bad = FnIntensity::new("bad", 0.5, 1.0, |t, _x, _i, _a| 0.5 + t);
        let mut st = split_stream(1, 0);
        assert!(matches!(
            probe_bounds(&bad, 2, 1.0, &[], 500, &mut st),
            Err(Error::IntensityBounds { .. })
        ));
    }

    #[test]
    fn floor_lifts_small_values() {
        let f = Floored {
            inner: ConstantIntensity(1e-5),
            floor: 1e-3,
        };
        assert_eq!(f.evaluate(0.0, &[], 0, 0), 1e-3);
        assert_eq!(f.bounds(), (1e-3, 1e-3));
    }

    #[test]
    fn sign_family_members_in_bounds() {
        let acts = two_actions();
        let fam = SignFeedbackFamily::new(&acts, 0.01, 20.0, 5).unwrap();
        let mut st = split_stream(2, 0);
        for a in &fam.grids()[0] {
            for b in &fam.grids()[1] {
                let nu = fam.build(&[*a, *b]).unwrap();
                probe_bounds(nu.as_ref(), 2, 1.0, &[(-2.0, 2.0)], 200, &mut st).unwrap();
            }
        }
        let nu = fam.build(&[20.0, 5.0]).unwrap();
        assert_eq!(nu.evaluate(0.0, &[-0.1], 0, 1), 20.0);
        assert_eq!(nu.evaluate(0.0, &[0.1], 1, 0), 5.0);
        assert_eq!(nu.evaluate(0.0, &[0.1], 1, 1), 0.01);
        assert!(fam.build(&[30.0, 1.0]).is_err());
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(1.0, 20.0, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[4], 20.0);
    }
}
