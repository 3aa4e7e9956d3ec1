//! JSON experiment configuration.
//!
//! Every optional field has a per-benchmark default; [`validate_config`] fills
//! them in and reports problems by field path, e.g. `brute.subdivisions`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::action::FiniteActions;
use crate::bsde::{RegressionBasis, DEFAULT_SCHEDULE};
use crate::control::BruteConfig;
use crate::error::{Error, Result};
use crate::intensity::{geometric_grid, ConstantFamily, DeadZoneFamily, IntensityFamily, SignFeedbackFamily};
use crate::oracles::{benchmark, BenchmarkSpec};
use crate::problem::ProblemSpec;
use crate::randomized::{Estimator, OptimizeConfig};
use crate::rng::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Brute,
    Randomized,
    Bsde,
    Oracle,
    Campaign,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Brute => "brute",
            Mode::Randomized => "randomized",
            Mode::Bsde => "bsde",
            Mode::Oracle => "oracle",
            Mode::Campaign => "campaign",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Constant,
    SignFeedback,
    DeadZone,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBenchmark {
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBrute {
    subdivisions: Option<i64>,
    bin_edges: Option<Vec<f64>>,
    backward: Option<bool>,
    pilot_paths: Option<i64>,
    cap: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFd {
    x_lo: Option<f64>,
    x_hi: Option<f64>,
    nx: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerance {
    brute: Option<f64>,
    randomized: Option<f64>,
    bsde: Option<f64>,
    relative: Option<f64>,
    se_multiple: Option<f64>,
    grid_multiple: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    benchmark: RawBenchmark,
    mode: Option<Mode>,
    seed: Option<u64>,
    n_paths: Option<i64>,
    n_steps: Option<i64>,
    penalty_schedule: Option<Vec<f64>>,
    basis_degree: Option<i64>,
    family: Option<FamilyKind>,
    nu_min: Option<f64>,
    nu_max: Option<f64>,
    levels: Option<i64>,
    widths: Option<Vec<f64>>,
    constants: Option<Vec<f64>>,
    estimator: Option<Estimator>,
    budget: Option<i64>,
    optimizer_paths: Option<i64>,
    #[serde(default)]
    brute: RawBrute,
    #[serde(default)]
    fd: RawFd,
    #[serde(default)]
    tolerance: RawTolerance,
    out: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BruteSettings {
    pub subdivisions: usize,
    pub bin_edges: Vec<f64>,
    pub backward: bool,
    pub pilot_paths: usize,
    pub cap: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdSettings {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
}

/// A campaign estimate passes when `|estimate - oracle|` is at most the largest of
/// the absolute tolerance, `relative * |oracle|`, `se_multiple` combined standard
/// errors and `grid_multiple` oracle grid errors.
#[derive(Debug, Clone, Serialize)]
pub struct Tolerance {
    pub brute: f64,
    pub randomized: f64,
    pub bsde: f64,
    pub relative: f64,
    pub se_multiple: f64,
    pub grid_multiple: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub params: BTreeMap<String, f64>,
    pub mode: Mode,
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub penalty_schedule: Vec<f64>,
    pub basis_degree: usize,
    pub family: FamilyKind,
    pub nu_min: f64,
    pub nu_max: f64,
    pub levels: usize,
    pub widths: Vec<f64>,
    pub constants: Vec<f64>,
    pub estimator: Estimator,
    pub budget: usize,
    pub optimizer_paths: usize,
    pub brute: BruteSettings,
    pub fd: FdSettings,
    pub tolerance: Tolerance,
    /// Output directory; not part of the configuration hash.
    #[serde(skip)]
    pub out: Option<String>,
}

fn positive(field: &str, v: Option<i64>, default: usize) -> Result<usize> {
    match v {
        None => Ok(default),
        Some(n) if n > 0 => Ok(n as usize),
        Some(n) => Err(Error::config(field, format!("must be a positive integer, got {n}"))),
    }
}

fn non_negative(field: &str, v: Option<f64>, default: f64) -> Result<f64> {
    match v {
        None => Ok(default),
        Some(x) if x >= 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(Error::config(field, format!("must be finite and non-negative, got {x}"))),
    }
}

/// Parse JSON text, fill defaults and check ranges.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig> {
    let r: RawConfig = serde_json::from_str(raw).map_err(|e| Error::config("<root>", e.to_string()))?;
    let name = r.benchmark.name.as_str();
    // Resolves the name and checks parameter keys.
    benchmark(name, &r.benchmark.params)?;
    let bang = name == "bangbang";
    let lq = name == "lqgrid";

    let n_paths = positive("n_paths", r.n_paths, 100_000)?;
    let n_steps = positive("n_steps", r.n_steps, 100)?;
    let schedule = r.penalty_schedule.unwrap_or_else(|| DEFAULT_SCHEDULE.to_vec());
    if schedule.is_empty() || schedule.iter().any(|&n| !(n > 0.0 && n.is_finite())) {
        return Err(Error::config("penalty_schedule", "entries must be positive and finite"));
    }
    if schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("penalty_schedule", "must be strictly increasing"));
    }
    let basis_degree = positive("basis_degree", r.basis_degree, if bang { 5 } else { 3 })?;
    let family = r.family.unwrap_or(if bang {
        FamilyKind::SignFeedback
    } else if lq {
        FamilyKind::DeadZone
    } else {
        FamilyKind::Constant
    });
    let nu_min = r.nu_min.unwrap_or(0.01);
    let nu_max = r.nu_max.unwrap_or(if lq { 40.0 } else { 20.0 });
    if !(nu_min > 0.0) {
        return Err(Error::config("nu_min", format!("must be positive, got {nu_min}")));
    }
    if !(nu_min < nu_max) || !nu_max.is_finite() {
        return Err(Error::config(
            "nu_min",
            format!("intensity bounds need 0 < nu_min < nu_max < inf, got nu_min = {nu_min}, nu_max = {nu_max}"),
        ));
    }
    let levels = positive("levels", r.levels, 6)?;
    let widths = r.widths.unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.6]);
    if widths.is_empty() || widths.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::config("widths", "need at least one non-negative width"));
    }
    let constants = r.constants.unwrap_or_else(|| geometric_grid(nu_min.max(0.1), nu_max, levels));
    if constants.is_empty() || constants.iter().any(|&c| !(c >= nu_min && c <= nu_max)) {
        return Err(Error::config("constants", format!("values must lie in [{nu_min}, {nu_max}]")));
    }
    let budget = positive("budget", r.budget, 40)?;
    let optimizer_paths = positive("optimizer_paths", r.optimizer_paths, n_paths)?;

    let default_edges = if bang {
        vec![0.0]
    } else if lq {
        (0..=50).map(|i| (-25 + i) as f64 / 10.0).collect()
    } else {
        Vec::new()
    };
    let brute = BruteSettings {
        subdivisions: positive("brute.subdivisions", r.brute.subdivisions, if lq { 20 } else { 1 })?,
        bin_edges: r.brute.bin_edges.unwrap_or(default_edges),
        backward: r.brute.backward.unwrap_or(lq),
        pilot_paths: positive("brute.pilot_paths", r.brute.pilot_paths, 2000)?,
        cap: positive("brute.cap", r.brute.cap, 4096)?,
    };
    if brute.bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("brute.bin_edges", "must be strictly increasing"));
    }
    if n_steps % brute.subdivisions != 0 {
        return Err(Error::config(
            "brute.subdivisions",
            format!("{} does not divide n_steps = {n_steps}", brute.subdivisions),
        ));
    }
    let (dlo, dhi) = if name == "gbm_terminal" { (0.0, 6.0) } else { (-4.0, 4.0) };
    let fd = FdSettings {
        x_lo: r.fd.x_lo.unwrap_or(dlo),
        x_hi: r.fd.x_hi.unwrap_or(dhi),
        nx: positive("fd.nx", r.fd.nx, 401)?,
    };
    if !(fd.x_lo < fd.x_hi) {
        return Err(Error::config("fd.x_lo", "must be below fd.x_hi"));
    }
    if fd.nx < 3 {
        return Err(Error::config("fd.nx", "need at least 3 points"));
    }
    let t = &r.tolerance;
    let tolerance = Tolerance {
        brute: non_negative("tolerance.brute", t.brute, if bang { 0.05 } else { 0.0 })?,
        randomized: non_negative("tolerance.randomized", t.randomized, if bang { 0.1 } else { 0.0 })?,
        bsde: non_negative("tolerance.bsde", t.bsde, if bang { 0.1 } else { 0.0 })?,
        relative: non_negative("tolerance.relative", t.relative, if bang { 0.0 } else { 0.05 })?,
        se_multiple: non_negative("tolerance.se_multiple", t.se_multiple, 3.0)?,
        grid_multiple: non_negative("tolerance.grid_multiple", t.grid_multiple, 2.0)?,
    };

    Ok(ExperimentConfig {
        benchmark: r.benchmark.name,
        params: r.benchmark.params,
        mode: r.mode.unwrap_or(Mode::Campaign),
        seed: r.seed.unwrap_or(0),
        n_paths,
        n_steps,
        penalty_schedule: schedule,
        basis_degree,
        family,
        nu_min,
        nu_max,
        levels,
        widths,
        constants,
        estimator: r.estimator.unwrap_or(Estimator::Direct),
        budget,
        optimizer_paths,
        brute,
        fd,
        tolerance,
        out: r.out,
    })
}

/// Command-line values that replace their configuration-file counterparts.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub n_paths: Option<u64>,
    pub out: Option<String>,
}

/// [`validate_config`] after replacing top-level fields with `overrides`.
pub fn validate_config_with(raw: &str, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut v: serde_json::Value = serde_json::from_str(raw).map_err(|e| Error::config("<root>", e.to_string()))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| Error::config("<root>", "expected a JSON object"))?;
    if let Some(m) = overrides.mode {
        obj.insert("mode".into(), m.as_str().into());
    }
    if let Some(s) = overrides.seed {
        obj.insert("seed".into(), s.into());
    }
    if let Some(n) = overrides.n_paths {
        obj.insert("n_paths".into(), n.into());
    }
    if let Some(o) = &overrides.out {
        obj.insert("out".into(), o.clone().into());
    }
    validate_config(&v.to_string())
}

impl ExperimentConfig {
    /// Hex SHA-256 of the resolved configuration (output directory excluded).
    pub fn sha256(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn problem(&self) -> Result<(ProblemSpec, BenchmarkSpec)> {
        benchmark(&self.benchmark, &self.params)
    }

    pub fn grid(&self, spec: &ProblemSpec) -> Result<TimeGrid> {
        TimeGrid::uniform(spec.horizon, self.n_steps)
    }

    pub fn basis(&self) -> RegressionBasis {
        RegressionBasis {
            degree: self.basis_degree,
        }
    }

    pub fn family(&self, actions: &FiniteActions) -> Result<Arc<dyn IntensityFamily>> {
        Ok(match self.family {
            FamilyKind::Constant => Arc::new(ConstantFamily {
                values: self.constants.clone(),
            }),
            FamilyKind::SignFeedback => Arc::new(
                SignFeedbackFamily::new(actions, self.nu_min, self.nu_max, self.levels)
                    .map_err(|e| Error::config("family", e.to_string()))?,
            ),
            FamilyKind::DeadZone => Arc::new(DeadZoneFamily {
                marks: actions.marks().to_vec(),
                widths: self.widths.clone(),
                nu_min: self.nu_min,
                nu_max: self.nu_max,
                levels: self.levels,
            }),
        })
    }

    pub fn optimizer(&self) -> OptimizeConfig {
        OptimizeConfig::new(self.budget, self.optimizer_paths, self.seed.wrapping_add(2), self.estimator)
    }

    pub fn brute_config(&self, spec: &ProblemSpec) -> BruteConfig {
        let mut cfg = BruteConfig::new(
            self.brute.subdivisions,
            self.brute.bin_edges.clone(),
            (0..spec.actions.len()).collect(),
            self.n_paths,
            self.seed.wrapping_add(1),
        );
        cfg.backward = self.brute.backward;
        cfg.pilot_paths = self.brute.pilot_paths;
        cfg.cap = self.brute.cap;
        cfg
    }

    /// Seed of the BSDE ensemble.
    pub fn bsde_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }
}
