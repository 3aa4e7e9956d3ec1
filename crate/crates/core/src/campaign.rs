//! Mode runners, CSV emission and the value-equivalence campaign.
//!
//! Each CSV starts with a `#` comment line carrying the seed, the build id and the
//! SHA-256 of the resolved configuration, followed by a header row. Wall-clock
//! columns are written as `NA` unless timings are requested, so two runs with the
//! same configuration produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use serde::Serialize;

use crate::bsde::{solve_constrained, BsdeGridSolution, ConstraintReport};
use crate::config::{ExperimentConfig, Mode};
use crate::control::{value_brute_force, BruteResult};
use crate::error::{Result, ResultExt};
use crate::oracles::{
    bangbang_closed_form, fd_value_with_error, hjb_fd_solve, linear_expectation_oracle, FdGrid, OracleKind,
};
use crate::problem::ProblemSpec;
use crate::randomized::{optimize_intensity, OptimizationResult};
use crate::rng::TimeGrid;

pub const BUILD_ID: &str = env!("RANDCONTROL_BUILD_ID");

/// Rows beyond the header, all cells already formatted.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// CSV text with the provenance comment line.
    pub fn render(&self, cfg: &ExperimentConfig) -> String {
        let mut s = String::new();
        writeln!(s, "# seed={} build={} config_sha256={}", cfg.seed, BUILD_ID, cfg.sha256()).unwrap();
        writeln!(s, "{}", self.header.join(",")).unwrap();
        for r in &self.rows {
            writeln!(s, "{}", r.join(",")).unwrap();
        }
        s
    }

    pub fn write(&self, cfg: &ExperimentConfig, path: &Path) -> Result<()> {
        fs::write(path, self.render(cfg))?;
        Ok(())
    }
}

/// Shortest round-trip decimal, `NA` for non-finite values.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "NA".to_string()
    }
}

pub fn run_brute(cfg: &ExperimentConfig, spec: &ProblemSpec, grid: &TimeGrid) -> Result<(BruteResult, Table)> {
    let res = value_brute_force(spec, grid, &cfg.brute_config(spec))?;
    let mut t = Table::new(&["policy_id", "gain", "se"]);
    for (id, est) in &res.candidates {
        t.rows.push(vec![id.to_string(), num(est.mean), num(est.se)]);
    }
    Ok((res, t))
}

pub fn run_randomized(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    grid: &TimeGrid,
) -> Result<(OptimizationResult, Table)> {
    let family = cfg.family(&spec.actions)?;
    let res = optimize_intensity(spec, grid, family.as_ref(), &cfg.optimizer())?;
    let dims = family.grids().len();
    let mut header: Vec<String> = (0..dims).map(|i| format!("theta_{i}")).collect();
    header.extend(["gain", "se", "estimator"].map(String::from));
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for e in &res.trace {
        let mut row: Vec<String> = e.theta.iter().map(|&v| num(v)).collect();
        row.push(num(e.gain.estimate.mean));
        row.push(num(e.gain.estimate.se));
        row.push(e.gain.estimator.as_str().to_string());
        t.rows.push(row);
    }
    Ok((res, t))
}

pub fn run_bsde(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    record_timings: bool,
) -> Result<(BsdeGridSolution, ConstraintReport, Table)> {
    let (sol, report) = solve_constrained(
        spec,
        &cfg.penalty_schedule,
        None,
        grid,
        cfg.basis(),
        cfg.n_paths,
        cfg.bsde_seed(),
    )?;
    let mut t = Table::new(&["n_penalty", "Y0", "se", "G_n", "runtime_s"]);
    for r in &report.rows {
        t.rows.push(vec![
            num(r.n_penalty),
            num(r.y0.mean),
            num(r.y0.se),
            num(r.g_n.mean),
            if record_timings { num(r.runtime_s) } else { "NA".to_string() },
        ]);
    }
    Ok((sol, report, t))
}

/// Reference value at `(0, x0)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleValue {
    pub kind: OracleKind,
    pub value: f64,
    pub se: f64,
    pub grid_error: f64,
}

/// Largest number of time rows written for a value surface.
const SURFACE_TIME_ROWS: usize = 101;

pub fn run_oracle(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    grid: &TimeGrid,
    kind: OracleKind,
) -> Result<(OracleValue, Table)> {
    let actions: Vec<usize> = (0..spec.actions.len()).collect();
    let x0 = spec.x0[0];
    let value = match kind {
        OracleKind::ClosedForm => OracleValue {
            kind,
            value: bangbang_closed_form(x0, 0.0, spec.horizon),
            se: 0.0,
            grid_error: 0.0,
        },
        OracleKind::FdPde => {
            let v = fd_value_with_error(spec, cfg.fd.x_lo, cfg.fd.x_hi, cfg.fd.nx, &actions)?;
            OracleValue {
                kind,
                value: v.value,
                se: 0.0,
                grid_error: v.grid_error,
            }
        }
        OracleKind::LinearExpectation => {
            let e = linear_expectation_oracle(spec, grid, cfg.n_paths, cfg.seed.wrapping_add(4))?;
            OracleValue {
                kind,
                value: e.mean,
                se: e.se,
                grid_error: 0.0,
            }
        }
    };
    let fd = FdGrid::stable(spec, cfg.fd.x_lo, cfg.fd.x_hi, cfg.fd.nx, &actions)?;
    let surface = hjb_fd_solve(spec, &fd, &actions)?;
    let stride = fd.nt.div_ceil(SURFACE_TIME_ROWS - 1).max(1);
    let mut t = Table::new(&["t", "x", "v"]);
    for k in (0..=fd.nt).filter(|k| k % stride == 0 || *k == fd.nt) {
        for (x, v) in surface.xs.iter().zip(surface.row(k)) {
            t.rows.push(vec![num(surface.ts[k]), num(*x), num(*v)]);
        }
    }
    Ok((value, t))
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignRow {
    pub stage: String,
    pub estimate: f64,
    pub se: f64,
    /// Largest admissible `|estimate - oracle|`.
    pub allowed: f64,
    pub error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignReport {
    pub benchmark: String,
    pub seed: u64,
    pub build: String,
    pub config_sha256: String,
    pub oracle: OracleValue,
    pub rows: Vec<CampaignRow>,
    pub pass: bool,
}

impl CampaignReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "benchmark",
            "stage",
            "estimate",
            "se",
            "oracle",
            "oracle_se",
            "grid_error",
            "allowed",
            "pass",
        ]);
        for r in &self.rows {
            t.rows.push(vec![
                self.benchmark.clone(),
                r.stage.clone(),
                num(r.estimate),
                num(r.se),
                num(self.oracle.value),
                num(self.oracle.se),
                num(self.oracle.grid_error),
                num(r.allowed),
                r.pass.to_string(),
            ]);
        }
        t
    }
}

fn judge(cfg: &ExperimentConfig, stage: &str, abs_tol: f64, estimate: f64, se: f64, oracle: &OracleValue) -> CampaignRow {
    let tol = &cfg.tolerance;
    let combined = (se * se + oracle.se * oracle.se).sqrt();
    let allowed = abs_tol
        .max(tol.relative * oracle.value.abs())
        .max(tol.se_multiple * combined)
        .max(tol.grid_multiple * oracle.grid_error);
    let error = (estimate - oracle.value).abs();
    CampaignRow {
        stage: stage.to_string(),
        estimate,
        se,
        allowed,
        error,
        pass: error <= allowed,
    }
}

fn write_table(out: Option<&Path>, cfg: &ExperimentConfig, name: &str, table: &Table) -> Result<()> {
    if let Some(dir) = out {
        let path = dir.join(name);
        table.write(cfg, &path).context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Brute force, randomized optimization, constrained BSDE and the oracle on one
/// benchmark, each stage seeded from the shared seed.
pub fn run_campaign(cfg: &ExperimentConfig, out: Option<&Path>, record_timings: bool) -> Result<CampaignReport> {
    let (spec, bench) = cfg.problem()?;
    let grid = cfg.grid(&spec)?;
    let (oracle, oracle_t) = run_oracle(cfg, &spec, &grid, bench.oracle_kind).context(|| "oracle stage".into())?;
    info!("oracle value {:.6}", oracle.value);
    let (brute, brute_t) = run_brute(cfg, &spec, &grid).context(|| "brute stage".into())?;
    info!("brute value {:.6} ± {:.6}", brute.value.mean, brute.value.se);
    let (rand, rand_t) = run_randomized(cfg, &spec, &grid).context(|| "randomized stage".into())?;
    info!("randomized value {:.6} ± {:.6}", rand.gain.estimate.mean, rand.gain.estimate.se);
    let (sol, _, bsde_t) = run_bsde(cfg, &spec, &grid, record_timings).context(|| "bsde stage".into())?;
    info!("bsde Y0 {:.6} ± {:.6}", sol.y0.mean, sol.y0.se);

    let tol = &cfg.tolerance;
    let rows = vec![
        judge(cfg, "brute", tol.brute, brute.value.mean, brute.value.se, &oracle),
        judge(
            cfg,
            "randomized",
            tol.randomized,
            rand.gain.estimate.mean,
            rand.gain.estimate.se,
            &oracle,
        ),
        judge(cfg, "bsde", tol.bsde, sol.y0.mean, sol.y0.se, &oracle),
    ];
    let report = CampaignReport {
        benchmark: cfg.benchmark.clone(),
        seed: cfg.seed,
        build: BUILD_ID.to_string(),
        config_sha256: cfg.sha256(),
        oracle,
        pass: rows.iter().all(|r| r.pass),
        rows,
    };
    write_table(out, cfg, "oracle.csv", &oracle_t)?;
    write_table(out, cfg, "brute.csv", &brute_t)?;
    write_table(out, cfg, "randomized.csv", &rand_t)?;
    write_table(out, cfg, "bsde.csv", &bsde_t)?;
    write_table(out, cfg, "campaign.csv", &report.table())?;
    if let Some(dir) = out {
        let path = dir.join("summary.json");
        fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
            .map_err(crate::Error::from)
            .context(|| format!("writing {}", path.display()))?;
    }
    Ok(report)
}

/// Outcome of one CLI invocation.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// False only when a campaign misses a tolerance.
    pub pass: bool,
    pub summary: String,
}

/// Run `cfg.mode`, writing `<mode>.csv` (and the campaign files) into `out`.
pub fn run_mode(cfg: &ExperimentConfig, out: Option<&Path>, record_timings: bool) -> Result<RunOutcome> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(crate::Error::from).context(|| format!("creating {}", dir.display()))?;
    }
    if cfg.mode == Mode::Campaign {
        let r = run_campaign(cfg, out, record_timings)?;
        let mut summary = format!("{} oracle {}\n", r.benchmark, num(r.oracle.value));
        for row in &r.rows {
            writeln!(
                summary,
                "{:<10} {} ± {} (|err| {} ≤ {}): {}",
                row.stage,
                num(row.estimate),
                num(row.se),
                num(row.error),
                num(row.allowed),
                if row.pass { "PASS" } else { "FAIL" }
            )
            .unwrap();
        }
        return Ok(RunOutcome { pass: r.pass, summary });
    }
    let (spec, bench) = cfg.problem()?;
    let grid = cfg.grid(&spec)?;
    let (summary, table) = match cfg.mode {
        Mode::Brute => {
            let (r, t) = run_brute(cfg, &spec, &grid)?;
            (format!("brute value {} ± {}", num(r.value.mean), num(r.value.se)), t)
        }
        Mode::Randomized => {
            let (r, t) = run_randomized(cfg, &spec, &grid)?;
            (
                format!(
                    "randomized value {} ± {} at theta {:?}",
                    num(r.gain.estimate.mean),
                    num(r.gain.estimate.se),
                    r.theta
                ),
                t,
            )
        }
        Mode::Bsde => {
            let (s, _, t) = run_bsde(cfg, &spec, &grid, record_timings)?;
            (format!("bsde Y0 {} ± {} at n = {}", num(s.y0.mean), num(s.y0.se), num(s.n_penalty)), t)
        }
        Mode::Oracle => {
            let (v, t) = run_oracle(cfg, &spec, &grid, bench.oracle_kind)?;
            (format!("oracle value {} (se {}, grid error {})", num(v.value), num(v.se), num(v.grid_error)), t)
        }
        Mode::Campaign => unreachable!(),
    };
    write_table(out, cfg, &format!("{}.csv", cfg.mode.as_str()), &table)?;
    Ok(RunOutcome { pass: true, summary })
}
