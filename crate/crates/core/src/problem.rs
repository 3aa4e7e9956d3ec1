//! Control problem data: coefficients, action space, horizon and start point.

use std::sync::Arc;

use crate::action::FiniteActions;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Coefficients of the controlled state equation and of the gain.
///
/// `diffusion` fills an `n x d` matrix in row-major order.
pub trait Coefficients: Send + Sync {
    fn drift(&self, t: f64, x: &[f64], a: f64, out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64], a: f64, out: &mut [f64]);
    fn running(&self, t: f64, x: &[f64], a: f64) -> f64;
    fn terminal(&self, x: &[f64]) -> f64;

    /// True when `b`, `sigma` and `f` ignore the action. Used to gate the linear
    /// expectation oracle; the default answers conservatively.
    fn control_independent(&self) -> bool {
        false
    }
}

type Scalar3 = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;
type Scalar1 = dyn Fn(f64) -> f64 + Send + Sync;

/// One-dimensional coefficients (`n = d = 1`) from closures.
#[derive(Clone)]
pub struct ScalarCoefficients {
    b: Arc<Scalar3>,
    sigma: Arc<Scalar3>,
    f: Arc<Scalar3>,
    g: Arc<Scalar1>,
    control_independent: bool,
}

impl ScalarCoefficients {
    pub fn new(
        b: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarCoefficients {
            b: Arc::new(b),
            sigma: Arc::new(sigma),
            f: Arc::new(f),
            g: Arc::new(g),
            control_independent: false,
        }
    }

    /// Mark the coefficients as not depending on the action.
    pub fn control_free(mut self) -> Self {
        self.control_independent = true;
        self
    }
}

impl Coefficients for ScalarCoefficients {
    fn drift(&self, t: f64, x: &[f64], a: f64, out: &mut [f64]) {
        out[0] = (self.b)(t, x[0], a);
    }
    fn diffusion(&self, t: f64, x: &[f64], a: f64, out: &mut [f64]) {
        out[0] = (self.sigma)(t, x[0], a);
    }
    fn running(&self, t: f64, x: &[f64], a: f64) -> f64 {
        (self.f)(t, x[0], a)
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        (self.g)(x[0])
    }
    fn control_independent(&self) -> bool {
        self.control_independent
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dim_x: usize,
    pub dim_w: usize,
    pub coeffs: Arc<dyn Coefficients>,
    pub actions: FiniteActions,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub lipschitz_l: f64,
    pub growth_r: f64,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dim_x", &self.dim_x)
            .field("dim_w", &self.dim_w)
            .field("actions", &self.actions)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .finish()
    }
}

impl ProblemSpec {
    pub fn scalar(
        name: impl Into<String>,
        coeffs: ScalarCoefficients,
        actions: FiniteActions,
        horizon: f64,
        x0: f64,
    ) -> Result<Self> {
        let spec = ProblemSpec {
            name: name.into(),
            dim_x: 1,
            dim_w: 1,
            coeffs: Arc::new(coeffs),
            actions,
            horizon,
            x0: vec![x0],
            lipschitz_l: 1.0,
            growth_r: 2.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_constants(mut self, lipschitz_l: f64, growth_r: f64) -> Self {
        self.lipschitz_l = lipschitz_l;
        self.growth_r = growth_r;
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = x0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim_x == 0 || self.dim_w == 0 {
            return Err(Error::invalid("dim", "state and noise dimensions must be positive"));
        }
        if self.x0.len() != self.dim_x {
            return Err(Error::invalid("x0", format!("expected {} components", self.dim_x)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", format!("{} is not a positive time", self.horizon)));
        }
        Ok(())
    }

    pub fn mark_value(&self, a: usize) -> f64 {
        self.actions.mark(a)
    }

    /// Randomized probes of the Lipschitz and growth conditions on `[0,T] x box x A`.
    /// Returns the largest observed Lipschitz quotient.
    pub fn probe_assumptions(&self, state_box: (f64, f64), probes: usize, stream: &mut RngStream) -> Result<f64> {
        let n = self.dim_x;
        let d = self.dim_w;
        let (lo, hi) = state_box;
        let mut worst: f64 = 0.0;
        let mut bx = vec![0.0; n];
        let mut by = vec![0.0; n];
        let mut sx = vec![0.0; n * d];
        let mut sy = vec![0.0; n * d];
        for _ in 0..probes {
            let t = self.horizon * stream.uniform();
            let x: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * stream.uniform()).collect();
            let y: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * stream.uniform()).collect();
            let a = self.actions.mark((stream.uniform() * self.actions.len() as f64) as usize % self.actions.len());
            self.coeffs.drift(t, &x, a, &mut bx);
            self.coeffs.drift(t, &y, a, &mut by);
            self.coeffs.diffusion(t, &x, a, &mut sx);
            self.coeffs.diffusion(t, &y, a, &mut sy);
            let dx = norm_diff(&x, &y);
            if dx > 1e-12 {
                let q = (norm_diff(&bx, &by) + norm_diff(&sx, &sy)) / dx;
                worst = worst.max(q);
                if q > self.lipschitz_l * (1.0 + 1e-9) {
                    return Err(Error::invalid(
                        "lipschitz_l",
                        format!("Lipschitz quotient {q} exceeds declared L = {}", self.lipschitz_l),
                    ));
                }
            }
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let bound = self.lipschitz_l * (1.0 + xn.powf(self.growth_r));
            let fv = self.coeffs.running(t, &x, a).abs();
            let gv = self.coeffs.terminal(&x).abs();
            if fv > bound || gv > bound {
                return Err(Error::invalid(
                    "growth_r",
                    format!("|f| = {fv} or |g| = {gv} exceeds L(1+|x|^r) = {bound} at x = {x:?}"),
                ));
            }
        }
        Ok(worst)
    }
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::ActionSpace;
    use crate::rng::split_stream;

    fn acts() -> FiniteActions {
        FiniteActions::new(ActionSpace::finite(vec![-1.0, 1.0], vec![1.0, 1.0], -1.0).unwrap()).unwrap()
    }

    #[test]
    fn probes_accept_lipschitz_coefficients() {
        let c = ScalarCoefficients::new(|_, x, a| 0.5 * x + a, |_, x, _| 0.2 * x, |_, _, _| 0.0, |x| -x.abs());
        let spec = ProblemSpec::scalar("t", c, acts(), 1.0, 0.0).unwrap().with_constants(1.0, 1.0);
        let q = spec.probe_assumptions((-3.0, 3.0), 500, &mut split_stream(0, 0)).unwrap();
        assert!(q <= 0.7 + 1e-9);
    }

    #[test]
    fn probes_reject_superlinear_drift() {
        let c = ScalarCoefficients::new(|_, x, _| x * x, |_, _, _| 0.0, |_, _, _| 0.0, |_| 0.0);
        let spec = ProblemSpec::scalar("t", c, acts(), 1.0, 0.0).unwrap();
        assert!(spec.probe_assumptions((-3.0, 3.0), 500, &mut split_stream(0, 0)).is_err());
    }

    #[test]
    fn rejects_bad_horizon() {
        let c = ScalarCoefficients::new(|_, _, _| 0.0, |_, _, _| 0.0, |_, _, _| 0.0, |_| 0.0);
        assert!(ProblemSpec::scalar("t", c, acts(), 0.0, 0.0).is_err());
    }
}
