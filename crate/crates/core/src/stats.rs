//! Deterministic reductions and a few test statistics.

use serde::Serialize;

/// Pairwise (cascade) summation in a fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 128;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Monte-Carlo point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    /// Sample mean and standard error. The mean is accumulated relative to the
    /// first sample, so a constant sample returns that constant exactly.
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let n = xs.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                se: f64::NAN,
                n: 0,
            };
        }
        let shift = xs[0];
        let centred: Vec<f64> = xs.iter().map(|x| x - shift).collect();
        let dm = pairwise_sum(&centred) / n as f64;
        let mean = shift + dm;
        if n < 2 {
            return Estimate { mean, se: 0.0, n };
        }
        let sq: Vec<f64> = centred.iter().map(|c| (c - dm) * (c - dm)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        Estimate {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    pub fn exact(value: f64) -> Estimate {
        Estimate {
            mean: value,
            se: 0.0,
            n: 1,
        }
    }

    /// SE of the difference of two independent estimates.
    pub fn combined_se(&self, other: &Estimate) -> f64 {
        (self.se * self.se + other.se * other.se).sqrt()
    }

    /// `|mean - target| <= k * se`, treating a zero SE as exact comparison.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Sample standard deviation divided by the mean, for weight diagnostics.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let e = Estimate::from_samples(xs);
    if e.n < 2 {
        return 0.0;
    }
    e.se * (e.n as f64).sqrt() / e.mean.abs()
}

/// One-sample Kolmogorov-Smirnov test. Returns `(D, p-value)` using the
/// asymptotic Kolmogorov distribution with the usual finite-n correction.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    (d, kolmogorov_survival(lambda))
}

/// P(K > lambda) for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = 2.0 * (-1f64).powi(j - 1) * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
