//! Desk-scale acceptance checks for the preconditioners and optimizers.
//!
//! Each check builds its own problems from a master seed, runs the relevant
//! method and compares a measured quantity with a pinned bound.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{
    check_scalar_lemma, contraction_check, fit_points, gap_restricted, noise_floor, RateMode,
};
use crate::optim::{
    run, run_observed, step_extragrad, step_sgda, step_single_call, warm_start, Method,
    OptimizerConfig, RunObserver, StepContext,
};
use crate::point::{OracleCounters, PointPair};
use crate::precond::{
    curvature_hutchinson, gamma_bound, CurvatureSource, ScalingConfig, ScalingState, UpdateCadence,
};
use crate::problems::{
    bilinear_from_matrix, make_bilinear, make_minty, make_quadratic, OracleSample, ProblemClass,
    QuadraticParts, SaddleProblem,
};
use crate::rng::derive_seed;

/// Outcome of one acceptance check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub key: &'static str,
    pub group: &'static str,
    pub property: &'static str,
    pub passed: bool,
    pub measured: String,
    pub bound: String,
    pub elapsed_s: f64,
    pub budget_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Restrict to checks whose key or group equals this name.
    pub only: Option<String>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 42,
            only: None,
        }
    }
}

struct CheckSpec {
    key: &'static str,
    group: &'static str,
    property: &'static str,
    budget_s: Option<f64>,
}

const CHECKS: &[CheckSpec] = &[
    CheckSpec {
        key: "range",
        group: "lemma1",
        property: "every clipped scaling entry lies in [e, G]",
        budget_s: Some(5.0),
    },
    CheckSpec {
        key: "growth",
        group: "lemma1",
        property: "fired updates grow by at most the bound, skipped ones not at all",
        budget_s: None,
    },
    CheckSpec {
        key: "sc-contraction",
        group: "convergence",
        property: "deterministic strongly monotone contraction at every step",
        budget_s: Some(30.0),
    },
    CheckSpec {
        key: "c-rate",
        group: "convergence",
        property: "restricted gap of the averaged iterate decays as 1/T on bilinear games",
        budget_s: Some(60.0),
    },
    CheckSpec {
        key: "sgda-divergence",
        group: "baseline",
        property: "SGDA spirals out on f = xy while extra-gradient contracts",
        budget_s: None,
    },
    CheckSpec {
        key: "noise-floor",
        group: "convergence",
        property: "halving the step halves the stochastic plateau",
        budget_s: Some(60.0),
    },
    CheckSpec {
        key: "single-call",
        group: "accounting",
        property: "oracle calls 2T vs T+1 and the single-call step is cheaper",
        budget_s: None,
    },
    CheckSpec {
        key: "hutchinson",
        group: "estimator",
        property: "Hutchinson diagonal estimate is unbiased",
        budget_s: None,
    },
    CheckSpec {
        key: "scalar-lemma",
        group: "scalar-bound",
        property: "(1 - 1/T)^sqrt(T) <= 1 - 1/(2 sqrt T) on a log-spaced sweep",
        budget_s: None,
    },
    CheckSpec {
        key: "minty-trend",
        group: "convergence",
        property: "best squared operator norm decays on a non-monotone Minty problem",
        budget_s: None,
    },
    CheckSpec {
        key: "negative-momentum",
        group: "momentum",
        property: "negative momentum reaches the same accuracy within 2x iterations",
        budget_s: None,
    },
];

/// `(key, group)` of every check, in execution order.
pub fn check_names() -> Vec<(&'static str, &'static str)> {
    CHECKS.iter().map(|c| (c.key, c.group)).collect()
}

struct Measured {
    passed: bool,
    measured: String,
    bound: String,
}

fn result(key: &str, m: Measured, elapsed_s: f64) -> CheckResult {
    let spec = CHECKS
        .iter()
        .find(|c| c.key == key)
        .expect("known check key");
    let within_budget = spec.budget_s.is_none_or(|b| elapsed_s <= b);
    let mut bound = m.bound;
    if let Some(b) = spec.budget_s {
        bound = format!("{bound}; runtime < {b} s");
    }
    CheckResult {
        key: spec.key,
        group: spec.group,
        property: spec.property,
        passed: m.passed && within_budget,
        measured: m.measured,
        bound,
        elapsed_s,
        budget_s: spec.budget_s,
    }
}

/// Runs the selected checks.
pub fn run_checks(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let selected = |key: &str| {
        let spec = CHECKS
            .iter()
            .find(|c| c.key == key)
            .expect("known check key");
        opts.only
            .as_deref()
            .is_none_or(|o| o == spec.key || o == spec.group)
    };
    if let Some(o) = &opts.only {
        if !CHECKS.iter().any(|c| c.key == o || c.group == o) {
            let names: Vec<_> = CHECKS.iter().map(|c| c.key).collect();
            return Err(Error::invalid(format!(
                "unknown check '{o}'; available: {}",
                names.join(", ")
            )));
        }
    }
    let seed = |i: u64| derive_seed(opts.seed, i);
    let mut out = Vec::new();
    if selected("range") || selected("growth") {
        let start = Instant::now();
        let (range, growth) = preconditioner_lemma(seed(1))?;
        let el = start.elapsed().as_secs_f64();
        if selected("range") {
            out.push(result("range", range, el));
        }
        if selected("growth") {
            out.push(result("growth", growth, el));
        }
    }
    type CheckFn = fn(u64) -> Result<Measured>;
    let singles: [(&str, CheckFn); 9] = [
        ("sc-contraction", sc_contraction),
        ("c-rate", c_rate),
        ("sgda-divergence", sgda_divergence),
        ("noise-floor", noise_floor_scaling),
        ("single-call", single_call_accounting),
        ("hutchinson", hutchinson_unbiased),
        ("scalar-lemma", scalar_lemma_sweep),
        ("minty-trend", minty_trend),
        ("negative-momentum", negative_momentum),
    ];
    for (i, (key, f)) in singles.iter().enumerate() {
        if !selected(key) {
            continue;
        }
        let start = Instant::now();
        let m = f(seed(10 + i as u64))?;
        out.push(result(key, m, start.elapsed().as_secs_f64()));
    }
    Ok(out)
}

/// Fixed-width table, one row per check.
pub fn format_table(results: &[CheckResult]) -> String {
    let mut s = format!(
        "{:<18} {:<6} {:>8}  {}\n",
        "check", "status", "time_s", "measured vs bound"
    );
    for r in results {
        s.push_str(&format!(
            "{:<18} {:<6} {:>8.2}  {} (bound: {})\n",
            r.key,
            if r.passed { "PASS" } else { "FAIL" },
            r.elapsed_s,
            r.measured,
            r.bound
        ));
    }
    s
}

fn offset_start(problem: &SaddleProblem, shift: f64) -> PointPair {
    let (dx, dy) = problem.dims();
    let zs = problem
        .z_star()
        .cloned()
        .unwrap_or_else(|| PointPair::zeros(dx, dy));
    PointPair {
        x: zs.x.add_scalar(shift),
        y: zs.y.add_scalar(-shift),
    }
}

/// Records the extreme clipped entries and, for every fired update, the
/// relative growth `max_i (after_i - before_i - 1e-12) / before_i` with the
/// beta that update used.
#[derive(Default)]
struct ScalingAudit {
    min_entry: f64,
    max_entry: f64,
    fired: Vec<(f64, f64)>,
    skipped: usize,
    skipped_increases: usize,
}

impl RunObserver for ScalingAudit {
    fn wants_scaling(&self) -> bool {
        true
    }

    fn on_step(&mut self, _t: usize, before: &ScalingState, after: &ScalingState, fired: bool) {
        self.min_entry = self.min_entry.min(after.clipped_min());
        self.max_entry = self.max_entry.max(after.clipped_max());
        let pairs = before
            .clipped_x
            .iter()
            .zip(after.clipped_x.iter())
            .chain(before.clipped_y.iter().zip(after.clipped_y.iter()));
        if fired {
            let growth = pairs
                .map(|(b, a)| (a - b - 1e-12) / b)
                .fold(f64::NEG_INFINITY, f64::max);
            self.fired.push((growth, 1.0 - before.next_beta()));
        } else {
            self.skipped += 1;
            if pairs.into_iter().any(|(b, a)| a > b) {
                self.skipped_increases += 1;
            }
        }
    }
}

fn preconditioner_lemma(seed: u64) -> Result<(Measured, Measured)> {
    let problem = make_quadratic(10, 10, 0.5, 2.0, seed)?.with_noise(0.1)?;
    let z0 = offset_start(&problem, 1.0);
    let presets = [
        ScalingConfig::adam(),
        ScalingConfig::rmsprop(),
        ScalingConfig::adahessian(),
        ScalingConfig::oasis(),
    ];
    let mut range_violations = 0;
    let mut growth_violations = 0;
    let mut worst_range = 0.0f64;
    let mut worst_growth = 0.0f64;
    let mut fired_total = 0;
    let mut skipped_total = 0;
    let mut skipped_bad = 0;
    let mut runs = 0;
    for (i, preset) in presets.iter().enumerate() {
        // p = 1 as required, plus a p = 1/2 copy so skipped updates occur.
        for p in [1.0, 0.5] {
            let scaling = preset.with_cadence(UpdateCadence::Probabilistic { p });
            let gamma = scaling.floor / (4.0 * problem.lipschitz());
            let cfg = OptimizerConfig::new(Method::ExtraGradient, gamma, scaling, 10_000)
                .with_seed(derive_seed(seed, i as u64))
                .theory_safe(ProblemClass::StronglyMonotone);
            let mut audit = ScalingAudit {
                min_entry: f64::INFINITY,
                max_entry: 0.0,
                ..Default::default()
            };
            let traj = run_observed(&problem, &cfg, &z0, &mut audit)?;
            runs += 1;
            let g = match scaling.source {
                CurvatureSource::Hutchinson => {
                    gamma_bound(CurvatureSource::Hutchinson, &problem, None)?
                }
                CurvatureSource::GradSquare => {
                    gamma_bound(CurvatureSource::GradSquare, &problem, traj.max_dist)?
                }
            };
            let e = scaling.floor;
            if audit.min_entry < e || audit.max_entry > g {
                range_violations += 1;
            }
            worst_range = worst_range.max(audit.max_entry / g);
            let c = scaling.growth_constant(g, 1.0);
            for &(growth, one_minus_beta) in &audit.fired {
                let allowed = one_minus_beta * c;
                if growth > allowed {
                    growth_violations += 1;
                }
                if allowed > 0.0 {
                    worst_growth = worst_growth.max(growth / allowed);
                }
            }
            fired_total += audit.fired.len();
            skipped_total += audit.skipped;
            skipped_bad += audit.skipped_increases;
        }
    }
    let range = Measured {
        passed: range_violations == 0,
        measured: format!(
            "{range_violations} violating runs of {runs}; max entry / G = {worst_range:.3e}"
        ),
        bound: "0 violations".into(),
    };
    let growth = Measured {
        passed: growth_violations == 0 && skipped_bad == 0,
        measured: format!(
            "{growth_violations} of {fired_total} fired updates over the bound (worst ratio {worst_growth:.3e}); \
             {skipped_bad} of {skipped_total} skipped updates increased"
        ),
        bound: "0 violations".into(),
    };
    Ok((range, growth))
}

fn sc_contraction(seed: u64) -> Result<Measured> {
    let mut worst_ratio = 0.0f64;
    let mut worst_final = 0.0f64;
    let mut all_passed = true;
    let mut max_t = 0;
    let mut first_failure = None;
    for k in 0..5 {
        let problem = make_quadratic(3, 3, 0.5, 2.0, derive_seed(seed, k))?;
        let base = ScalingConfig::oasis();
        let e = base.floor;
        let gamma = e / (4.0 * problem.lipschitz());
        let g = gamma_bound(CurvatureSource::Hutchinson, &problem, None)?;
        let c = base.growth_constant(g, 1.0);
        let beta = 1.0 - gamma * problem.mu() / (2.0 * g * c);
        let t = (40.0 * g / (gamma * problem.mu())).ceil() as usize;
        max_t = max_t.max(t);
        let cfg = OptimizerConfig::new(Method::ExtraGradient, gamma, base.with_beta(beta), t)
            .with_seed(derive_seed(seed, 100 + k))
            .theory_safe(ProblemClass::StronglyMonotone);
        let z0 = offset_start(&problem, 1.0);
        let traj = run(&problem, &cfg, &z0)?;
        let report = contraction_check(&traj, &problem, &cfg)?;
        worst_ratio = worst_ratio.max(report.worst_ratio);
        let zs = problem.z_star().expect("quadratic has a solution");
        let ratio = traj.final_z.dist_sq(zs) / z0.dist_sq(zs);
        worst_final = worst_final.max(ratio);
        if !report.passed || ratio > 1e-16 {
            all_passed = false;
            if first_failure.is_none() {
                first_failure = report.first_violation.map(|v| {
                    format!(
                        "; first violation t={} lhs={:e} rhs={:e}",
                        v.t, v.lhs, v.rhs
                    )
                });
            }
        }
    }
    Ok(Measured {
        passed: all_passed,
        measured: format!(
            "worst R^2 ratio to bound {worst_ratio:.3e}; worst final |z-z*|^2 ratio {worst_final:.3e} (T <= {max_t}){}",
            first_failure.unwrap_or_default()
        ),
        bound: "ratio <= 1 at every step, final ratio <= 1e-16".into(),
    })
}

fn c_rate(seed: u64) -> Result<Measured> {
    let problem = make_bilinear(5, 1.0, seed)?;
    let scaling = ScalingConfig::oasis();
    let gamma = scaling.floor / (2.0 * problem.lipschitz());
    let z0 = offset_start(&problem, 1.0);
    let zs_norm = problem.z_star().map_or(0.0, |z| z.norm());
    let horizons = [100.0, 1e3, 1e4, 1e5];
    let mut gaps = Vec::new();
    for &t in &horizons {
        let cfg = OptimizerConfig::new(Method::ExtraGradient, gamma, scaling, t as usize)
            .with_seed(derive_seed(seed, 1))
            .theory_safe(ProblemClass::Monotone);
        let traj = run(&problem, &cfg, &z0)?;
        let omega = 2.0 * traj.max_dist.unwrap_or(0.0) + zs_norm;
        gaps.push(gap_restricted(&problem, &traj.final_avg_uniform, omega)?);
    }
    let fit = fit_points(&horizons, &gaps, RateMode::LogLog)?;
    Ok(Measured {
        passed: (fit.slope + 1.0).abs() <= 0.15,
        measured: format!(
            "slope {:.4}; gaps {:?}",
            fit.slope,
            gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>()
        ),
        bound: "slope in [-1.15, -0.85]".into(),
    })
}

fn sgda_divergence(_seed: u64) -> Result<Measured> {
    let problem = bilinear_from_matrix(DMatrix::identity(1, 1), 0)?;
    let gamma = 0.1;
    let z0 = PointPair::from_slices(&[1.0], &[1.0])?;
    let mut ctx = StepContext::new(&problem, ScalingState::identity(1, 1), 0, 1)?;
    let mut z = z0.clone();
    for _ in 0..100 {
        z = step_sgda(&mut ctx, &z, gamma)?.next;
    }
    let expected = (1.0 + gamma * gamma).powi(100) * z0.norm_sq();
    let rel = (z.norm_sq() - expected).abs() / expected;
    let mut z = z0;
    let mut monotone = true;
    for _ in 0..100 {
        let next = step_extragrad(&mut ctx, &z, gamma)?.next;
        monotone &= next.norm() < z.norm();
        z = next;
    }
    Ok(Measured {
        passed: rel <= 1e-10 && monotone,
        measured: format!(
            "SGDA relative error {rel:.3e}; extra-gradient norm strictly decreasing: {monotone}"
        ),
        bound: "relative error <= 1e-10 and monotone decrease".into(),
    })
}

fn noise_floor_scaling(seed: u64) -> Result<Measured> {
    let problem = make_quadratic(5, 5, 0.5, 2.0, seed)?.with_noise(1.0)?;
    let scaling = ScalingConfig::oasis();
    let gamma = scaling.floor / (4.0 * problem.lipschitz());
    let z0 = problem.z_star().expect("quadratic has a solution").clone();
    let mut plateau = [0.0; 2];
    for (j, (g, t)) in [(gamma, 50_000), (gamma / 2.0, 100_000)]
        .into_iter()
        .enumerate()
    {
        for s in 0..5 {
            let cfg = OptimizerConfig::new(Method::ExtraGradient, g, scaling, t)
                .with_batch(16)
                .with_seed(derive_seed(seed, s));
            let traj = run(&problem, &cfg, &z0)?;
            plateau[j] += noise_floor(&traj.records)? / 5.0;
        }
    }
    let ratio = plateau[1] / plateau[0];
    Ok(Measured {
        passed: (0.3..=0.8).contains(&ratio),
        measured: format!(
            "plateau ratio {ratio:.4} ({:.3e} / {:.3e})",
            plateau[1], plateau[0]
        ),
        bound: "ratio in [0.3, 0.8]".into(),
    })
}

fn single_call_accounting(seed: u64) -> Result<Measured> {
    let problem = make_quadratic(256, 256, 0.5, 2.0, seed)?.with_noise(0.1)?;
    let scaling = ScalingConfig::adam();
    let gamma = OptimizerConfig::theory_gamma(&scaling, &problem);
    let z0 = offset_start(&problem, 1.0);
    let t = 1000;
    let eg = run(
        &problem,
        &OptimizerConfig::new(Method::ExtraGradient, gamma, scaling, t),
        &z0,
    )?;
    let sc = run(
        &problem,
        &OptimizerConfig::new(Method::SingleCallMomentum, gamma, scaling, t),
        &z0,
    )?;
    let counts_ok = eg.grad_calls == 2 * t as u64 && sc.grad_calls == t as u64 + 1;

    // Per-iteration cost of the bare step functions, best of interleaved rounds.
    let steps = 200;
    let (mut best_eg, mut best_sc) = (f64::INFINITY, f64::INFINITY);
    for round in 0..5 {
        let mut ctx = StepContext::new(&problem, ScalingState::new(scaling, 256, 256)?, round, 1)?;
        let start = Instant::now();
        let mut z = z0.clone();
        for _ in 0..steps {
            z = step_extragrad(&mut ctx, &z, gamma)?.next;
        }
        best_eg = best_eg.min(start.elapsed().as_secs_f64() / steps as f64);

        let mut ctx = StepContext::new(&problem, ScalingState::new(scaling, 256, 256)?, round, 1)?;
        let start = Instant::now();
        let mut z = z0.clone();
        let mut w = z0.clone();
        let mut cache = warm_start(&mut ctx, &z)?;
        for _ in 0..steps {
            let s = step_single_call(&mut ctx, &z, &w, &cache, gamma, 0.0, 1.0)?;
            (z, w, cache) = (s.next, s.anchor, s.cache);
        }
        best_sc = best_sc.min(start.elapsed().as_secs_f64() / steps as f64);
    }
    let ratio = best_sc / best_eg;
    Ok(Measured {
        passed: counts_ok && ratio < 0.65,
        measured: format!(
            "grad calls {} / {} at T = {t}; per-iteration time ratio {ratio:.3}",
            eg.grad_calls, sc.grad_calls
        ),
        bound: "2T / T+1 exactly; ratio < 0.65".into(),
    })
}

fn hutchinson_unbiased(seed: u64) -> Result<Measured> {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(5, 5, |_, _| r.random::<f64>() * 2.0 - 1.0);
    let a = &m + m.transpose() + DMatrix::identity(5, 5) * 12.0;
    let problem = QuadraticParts::new(
        a.clone(),
        DMatrix::zeros(5, 1),
        DMatrix::identity(1, 1),
        DVector::zeros(5),
        DVector::zeros(1),
    )
    .build_unchecked()?;
    let z = PointPair::zeros(5, 1);
    let sample = OracleSample::new(0, 1);
    let mut counters = OracleCounters::default();
    let n = 100_000;
    let mut sum = DVector::zeros(5);
    let mut sum_sq = DVector::zeros(5);
    for _ in 0..n {
        let h = curvature_hutchinson(&problem, &z, sample, &mut r, &mut counters)?;
        sum += &h.hx;
        sum_sq += h.hx.component_mul(&h.hx);
    }
    let nf = n as f64;
    let mean = &sum / nf;
    let mut worst_z = 0.0f64;
    for i in 0..5 {
        let var = (sum_sq[i] / nf - mean[i] * mean[i]) * nf / (nf - 1.0);
        let se = (var / nf).sqrt();
        let dev = (mean[i] - a[(i, i)]).abs();
        // A zero-variance entry must be exact.
        let z = if se > 0.0 {
            dev / se
        } else if dev == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst_z = worst_z.max(z);
    }
    let mut exhaustive = DVector::zeros(5);
    for mask in 0..32u32 {
        let v = DVector::from_fn(5, |i, _| if mask >> i & 1 == 1 { 1.0 } else { -1.0 });
        let (hv, _) = problem.hvp(&z, &v, &DVector::zeros(1), sample, &mut counters)?;
        exhaustive += v.component_mul(&hv);
    }
    exhaustive /= 32.0;
    let exact_err = (0..5)
        .map(|i| (exhaustive[i] - a[(i, i)]).abs())
        .fold(0.0, f64::max);
    Ok(Measured {
        passed: worst_z <= 3.0 && exact_err <= 1e-12,
        measured: format!(
            "worst deviation {worst_z:.3} standard errors; enumeration error {exact_err:.3e}"
        ),
        bound: "<= 3 standard errors; enumeration <= 1e-12".into(),
    })
}

fn scalar_lemma_sweep(_seed: u64) -> Result<Measured> {
    let n = 10_000;
    let failures: Vec<u64> = (0..n)
        .map(|k| (10f64.powf(6.0 * k as f64 / (n - 1) as f64)).round() as u64)
        .filter(|&t| !check_scalar_lemma(t))
        .collect();
    Ok(Measured {
        passed: failures.is_empty(),
        measured: format!(
            "{} failures in {n} points{}",
            failures.len(),
            failures
                .first()
                .map(|t| format!(", first T = {t}"))
                .unwrap_or_default()
        ),
        bound: "0 failures".into(),
    })
}

fn minty_trend(seed: u64) -> Result<Measured> {
    let problem = make_minty(seed)?.with_noise(1e-3)?;
    let batch = 1;
    let scaling = ScalingConfig::oasis();
    let gamma = scaling.floor / (3.0 * problem.lipschitz());
    let z0 = PointPair::from_slices(&[2.0], &[-1.5])?;
    let cfg = OptimizerConfig::new(Method::ExtraGradient, gamma, scaling, 100_000)
        .with_batch(batch)
        .with_seed(derive_seed(seed, 1))
        .theory_safe(ProblemClass::Minty);
    let traj = run(&problem, &cfg, &z0)?;
    let horizons = [1e3, 1e4, 1e5];
    let mins: Vec<f64> = horizons
        .iter()
        .map(|&t| {
            traj.records[..t as usize]
                .iter()
                .map(|r| r.grad_norm2)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let fit = fit_points(&horizons, &mins, RateMode::LogLog)?;
    let noise = problem.sigma().powi(2) / batch as f64;
    Ok(Measured {
        passed: fit.slope <= -0.7 && noise <= 1e-6,
        measured: format!(
            "slope {:.4}; best |F|^2 {:?}; sigma^2/b = {noise:.1e}",
            fit.slope,
            mins.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()
        ),
        bound: "slope <= -0.7 with sigma^2/b <= 1e-6".into(),
    })
}

fn iterations_to_ball(
    problem: &SaddleProblem,
    eta: f64,
    p: f64,
    seed: u64,
    max_iter: usize,
) -> Result<Option<usize>> {
    let scaling = ScalingConfig::oasis();
    let gamma = scaling.floor / (10.0 * problem.lipschitz());
    OptimizerConfig::new(Method::SingleCallMomentum, gamma, scaling, 1)
        .with_momentum(eta, p)
        .theory_safe(ProblemClass::StronglyMonotone)
        .validate(problem)?;
    let (dx, dy) = problem.dims();
    let zs = problem.z_star().expect("quadratic has a solution");
    let mut ctx = StepContext::new(problem, ScalingState::new(scaling, dx, dy)?, seed, 1)?;
    let z0 = offset_start(problem, 1.0);
    let target = 1e-12 * z0.dist_sq(zs);
    let mut cache = warm_start(&mut ctx, &z0)?;
    let (mut z, mut w) = (z0.clone(), z0);
    for t in 0..max_iter {
        if z.dist_sq(zs) <= target {
            return Ok(Some(t));
        }
        let s = step_single_call(&mut ctx, &z, &w, &cache, gamma, eta, p)?;
        (z, w, cache) = (s.next, s.anchor, s.cache);
    }
    Ok(None)
}

fn negative_momentum(seed: u64) -> Result<Measured> {
    let problem = make_quadratic(5, 5, 0.5, 2.0, seed)?;
    let p = 0.25;
    let e = ScalingConfig::oasis().floor;
    let max_iter = 2_000_000;
    let plain = iterations_to_ball(&problem, 0.0, p, derive_seed(seed, 1), max_iter)?;
    let momentum = iterations_to_ball(&problem, e * p, p, derive_seed(seed, 1), max_iter)?;
    let (passed, ratio) = match (plain, momentum) {
        (Some(a), Some(b)) => ((b as f64) <= 2.0 * a as f64, b as f64 / a as f64),
        _ => (false, f64::NAN),
    };
    Ok(Measured {
        passed,
        measured: format!("iterations eta=0: {plain:?}, eta=e*p: {momentum:?} (ratio {ratio:.3})"),
        bound: "ratio <= 2".into(),
    })
}
