//! Seeded execution of every (problem, optimizer, repeat) cell.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use saddle_scale_core::metrics::{contraction_check, gap_restricted};
use saddle_scale_core::optim::{run_observed, Averaging, Trajectory};
use saddle_scale_core::rng::derive_seed;
use saddle_scale_core::{Error, SaddleProblem};
use serde::Serialize;

use crate::config::{CheckSpec, SuiteConfig};
use crate::output::{write_text, CsvSink};

/// Environment variable bounding the worker pool.
pub const THREADS_ENV: &str = "SADDLE_SCALE_THREADS";

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub kind: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub problem: String,
    pub optimizer: String,
    pub repeat: u32,
    pub seed: u64,
    pub csv: String,
    pub records: usize,
    pub diverged: bool,
    pub diverged_at: Option<usize>,
    pub expect_divergence: bool,
    pub final_dist2: Option<f64>,
    pub final_r2_weighted: Option<f64>,
    pub final_grad_norm2: Option<f64>,
    pub final_gap: Option<f64>,
    pub grad_calls: u64,
    pub hvp_calls: u64,
    pub checks: Vec<CheckOutcome>,
}

impl CellSummary {
    /// Failed checks or a divergence that was not expected.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && (!self.diverged || self.expect_divergence)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub suite: String,
    pub digest: String,
    pub master_seed: u64,
    pub passed: bool,
    pub failures: Vec<String>,
    pub config: SuiteConfig,
    pub cells: Vec<CellSummary>,
}

struct Cell {
    index: usize,
    problem: usize,
    optimizer: usize,
    repeat: u32,
}

fn cells(cfg: &SuiteConfig) -> Vec<Cell> {
    let mut out = Vec::with_capacity(cfg.cell_count());
    for p in 0..cfg.problems.len() {
        for o in 0..cfg.optimizers.len() {
            for r in 0..cfg.repeats {
                out.push(Cell {
                    index: out.len(),
                    problem: p,
                    optimizer: o,
                    repeat: r,
                });
            }
        }
    }
    out
}

/// Directory receiving the suite's files: `<output_dir>/<name>-<digest prefix>`.
pub fn suite_dir(cfg: &SuiteConfig) -> PathBuf {
    cfg.output_dir
        .join(format!("{}-{}", cfg.name, &cfg.digest()[..12]))
}

/// Thread count from the explicit flag, else the environment, else rayon's default.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .with_context(|| format!("{THREADS_ENV}='{v}' is not a count"))?;
            Ok(Some(n.max(1)))
        }
        Err(_) => Ok(None),
    }
}

/// Runs every cell, writes the CSVs and `summary.json`, and returns the summary.
pub fn run_suite(cfg: &SuiteConfig, threads: Option<usize>) -> Result<Summary> {
    let dir = suite_dir(cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let problems: Vec<SaddleProblem> = cfg
        .problems
        .iter()
        .map(|p| p.build())
        .collect::<Result<_>>()?;
    let cells = cells(cfg);
    let run_one = |c: &Cell| run_cell(cfg, &problems[c.problem], c, &dir);
    let results: Vec<Result<CellSummary>> = match threads {
        Some(1) => cells.iter().map(run_one).collect(),
        _ => {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                builder = builder.num_threads(n);
            }
            builder
                .build()?
                .install(|| cells.par_iter().map(run_one).collect())
        }
    };
    let cells: Vec<CellSummary> = results.into_iter().collect::<Result<_>>()?;
    let mut failures = Vec::new();
    for c in &cells {
        let id = format!("{}/{}/r{}", c.problem, c.optimizer, c.repeat);
        if c.diverged && !c.expect_divergence {
            failures.push(format!(
                "{id}: diverged at t = {}",
                c.diverged_at.unwrap_or_default()
            ));
        }
        for ch in c.checks.iter().filter(|ch| !ch.passed) {
            failures.push(format!("{id}: {} failed: {}", ch.kind, ch.detail));
        }
    }
    let summary = Summary {
        suite: cfg.name.clone(),
        digest: cfg.digest(),
        master_seed: cfg.master_seed,
        passed: failures.is_empty(),
        failures,
        config: cfg.clone(),
        cells,
    };
    write_text(
        &dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

fn run_cell(
    cfg: &SuiteConfig,
    problem: &SaddleProblem,
    cell: &Cell,
    dir: &Path,
) -> Result<CellSummary> {
    let pspec = &cfg.problems[cell.problem];
    let ospec = &cfg.optimizers[cell.optimizer];
    let seed = derive_seed(cfg.master_seed, cell.index as u64);
    let opt = ospec.to_config(problem, seed)?;
    let z0 = cfg.start.point(problem)?;
    let csv_name = format!("{}__{}__r{}.csv", pspec.name(), ospec.name, cell.repeat);
    let mut sink = CsvSink::create(&dir.join(&csv_name))?;
    let outcome = run_observed(problem, &opt, &z0, &mut sink);
    sink.finish()?;
    let (traj, diverged_at) = match outcome {
        Ok(t) => (t, None),
        Err(Error::Divergence { t, partial }) => {
            log::info!("{csv_name}: diverged at t = {t}");
            (*partial, Some(t))
        }
        Err(e) => return Err(e).with_context(|| format!("cell {csv_name}")),
    };
    let finals = final_metrics(problem, &opt, &traj, diverged_at.is_some())?;
    let checks = cfg
        .checks
        .iter()
        .filter(|c| c.matches(pspec.name(), &ospec.name))
        .map(|c| evaluate_check(c, problem, &opt, &traj, diverged_at, &finals))
        .collect();
    Ok(CellSummary {
        problem: pspec.name().to_string(),
        optimizer: ospec.name.clone(),
        repeat: cell.repeat,
        seed,
        csv: csv_name,
        records: traj.records.len(),
        diverged: diverged_at.is_some(),
        diverged_at,
        expect_divergence: ospec.expect_divergence,
        final_dist2: finals.dist2,
        final_r2_weighted: finals.r2_weighted,
        final_grad_norm2: finals.grad_norm2,
        final_gap: finals.gap,
        grad_calls: traj.grad_calls,
        hvp_calls: traj.hvp_calls,
        checks,
    })
}

struct Finals {
    dist2: Option<f64>,
    r2_weighted: Option<f64>,
    grad_norm2: Option<f64>,
    gap: Option<f64>,
}

/// Metrics at `z_T`, or at the last finite record after a divergence.
fn final_metrics(
    problem: &SaddleProblem,
    opt: &saddle_scale_core::OptimizerConfig,
    traj: &Trajectory,
    diverged: bool,
) -> Result<Finals> {
    if diverged {
        let last = traj.records.last();
        return Ok(Finals {
            dist2: last.map(|r| r.dist2).filter(|v| v.is_finite()),
            r2_weighted: last.map(|r| r.r2_weighted).filter(|v| v.is_finite()),
            grad_norm2: last.map(|r| r.grad_norm2),
            gap: last.and_then(|r| r.gap),
        });
    }
    let z = &traj.final_z;
    let z_star = problem.z_star();
    let avg = match opt.averaging {
        Averaging::Ema { .. } => &traj.final_avg_ema,
        _ => &traj.final_avg_uniform,
    };
    let gap = match opt.gap_radius {
        Some(r) if opt.averaging != Averaging::None && !traj.records.is_empty() => {
            gap_restricted(problem, avg, r).ok()
        }
        _ => None,
    };
    Ok(Finals {
        dist2: z_star.map(|zs| z.dist_sq(zs)),
        r2_weighted: z_star
            .map(|zs| {
                saddle_scale_core::metrics::weighted_dist_sq(z, Some(zs), &traj.final_scaling)
            })
            .transpose()?,
        grad_norm2: Some(problem.field(z)?.norm_sq()),
        gap,
    })
}

fn evaluate_check(
    check: &CheckSpec,
    problem: &SaddleProblem,
    opt: &saddle_scale_core::OptimizerConfig,
    traj: &Trajectory,
    diverged_at: Option<usize>,
    finals: &Finals,
) -> CheckOutcome {
    let kind = check.label();
    let below = |value: Option<f64>, bound: f64, what: &str| -> CheckOutcome {
        match (diverged_at, value) {
            (Some(t), _) => CheckOutcome {
                kind,
                passed: false,
                detail: format!("run diverged at t = {t}"),
            },
            (None, Some(v)) => CheckOutcome {
                kind,
                passed: v <= bound,
                detail: format!("{what} = {v:e}, bound {bound:e}"),
            },
            (None, None) => CheckOutcome {
                kind,
                passed: false,
                detail: format!("{what} unavailable"),
            },
        }
    };
    match check {
        CheckSpec::FinalDist2Below { value, .. } => below(finals.dist2, *value, "final dist2"),
        CheckSpec::FinalGradNorm2Below { value, .. } => {
            below(finals.grad_norm2, *value, "final grad_norm2")
        }
        CheckSpec::Contraction { .. } => match contraction_check(traj, problem, opt) {
            Ok(r) => CheckOutcome {
                kind,
                passed: r.passed && diverged_at.is_none(),
                detail: match r.first_violation {
                    Some(v) => format!("violation at t = {}: {:e} > {:e}", v.t, v.lhs, v.rhs),
                    None => format!(
                        "{} steps, worst ratio {:.3e}",
                        r.steps_checked, r.worst_ratio
                    ),
                },
            },
            Err(e) => CheckOutcome {
                kind,
                passed: false,
                detail: e.to_string(),
            },
        },
    }
}
