//! Scaled extra-gradient methods, an SGDA baseline, and iterate averaging.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{weighted_dist_sq, GapEvaluator, RunRecord};
use crate::point::{FieldValue, OracleCounters, PointPair};
use crate::precond::{ScalingConfig, ScalingState};
use crate::problems::{OracleSample, ProblemClass, SaddleProblem};
use crate::rng::RunStreams;

/// Iterates with norm above this are treated as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;
pub const DEFAULT_EMA_DECAY: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(rename = "extragrad")]
    ExtraGradient,
    SingleCallMomentum,
    Sgda,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ExtraGradient => "extragrad",
            Method::SingleCallMomentum => "single-call-momentum",
            Method::Sgda => "sgda",
        }
    }
}

/// Which running average feeds the per-record gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Averaging {
    None,
    Uniform,
    Ema { lambda: f64 },
}

impl Averaging {
    /// Decay used for the EMA average kept on every trajectory.
    pub fn ema_decay(&self) -> f64 {
        match *self {
            Averaging::Ema { lambda } => lambda,
            _ => DEFAULT_EMA_DECAY,
        }
    }
}

fn default_anchor_prob() -> f64 {
    1.0
}

fn default_batch() -> u32 {
    1
}

fn default_averaging() -> Averaging {
    Averaging::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub gamma: f64,
    /// Momentum toward the anchor (single-call method only).
    #[serde(default)]
    pub eta: f64,
    /// Probability of moving the anchor to the current iterate (single-call method only).
    #[serde(default = "default_anchor_prob")]
    pub anchor_prob: f64,
    pub scaling: ScalingConfig,
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_batch")]
    pub batch: u32,
    #[serde(default = "default_averaging")]
    pub averaging: Averaging,
    /// Reject step parameters outside the guarantees for this problem class.
    #[serde(default)]
    pub theory_safe: Option<ProblemClass>,
    /// Radius of the balls around `z*` for the per-record restricted gap.
    #[serde(default)]
    pub gap_radius: Option<f64>,
    /// Keep every `(z_t, z_{t+1/2})` pair in the trajectory.
    #[serde(default)]
    pub keep_iterates: bool,
}

impl OptimizerConfig {
    pub fn new(method: Method, gamma: f64, scaling: ScalingConfig, iterations: usize) -> Self {
        OptimizerConfig {
            method,
            gamma,
            eta: 0.0,
            anchor_prob: 1.0,
            scaling,
            iterations,
            seed: 0,
            batch: 1,
            averaging: Averaging::Uniform,
            theory_safe: None,
            gap_radius: None,
            keep_iterates: false,
        }
    }

    /// The most conservative step with a guarantee: `e / (10 L)`.
    pub fn theory_gamma(scaling: &ScalingConfig, problem: &SaddleProblem) -> f64 {
        scaling.floor / (10.0 * problem.lipschitz())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch(mut self, batch: u32) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_momentum(mut self, eta: f64, anchor_prob: f64) -> Self {
        self.eta = eta;
        self.anchor_prob = anchor_prob;
        self
    }

    pub fn with_averaging(mut self, averaging: Averaging) -> Self {
        self.averaging = averaging;
        self
    }

    pub fn with_gap_radius(mut self, radius: f64) -> Self {
        self.gap_radius = Some(radius);
        self
    }

    pub fn theory_safe(mut self, class: ProblemClass) -> Self {
        self.theory_safe = Some(class);
        self
    }

    pub fn keep_iterates(mut self) -> Self {
        self.keep_iterates = true;
        self
    }

    /// Checks ranges and, in theory-safe mode, the step-size gates.
    ///
    /// `gamma = 0` is accepted as a degenerate frozen run.
    pub fn validate(&self, problem: &SaddleProblem) -> Result<()> {
        self.scaling.validate()?;
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!(
                "eta must be finite and >= 0, got {}",
                self.eta
            )));
        }
        if !(self.anchor_prob > 0.0 && self.anchor_prob <= 1.0) {
            return Err(Error::invalid(format!(
                "anchor_prob must lie in (0, 1], got {}",
                self.anchor_prob
            )));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be positive"));
        }
        if let Averaging::Ema { lambda } = self.averaging {
            if !(0.0..1.0).contains(&lambda) {
                return Err(Error::invalid(format!(
                    "EMA decay must lie in [0, 1), got {lambda}"
                )));
            }
        }
        if let Some(r) = self.gap_radius {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::InvalidRegion(format!(
                    "gap radius must be positive, got {r}"
                )));
            }
        }
        if let Some(class) = self.theory_safe {
            self.check_theory(problem, class)?;
        }
        Ok(())
    }

    fn check_theory(&self, problem: &SaddleProblem, class: ProblemClass) -> Result<()> {
        let e = self.scaling.floor;
        let l = problem.lipschitz();
        let slack = 1.0 + 1e-12;
        let reject = |what: String| Err(Error::invalid(format!("theory-safe mode: {what}")));
        match self.method {
            Method::Sgda => reject("SGDA has no convergence guarantee".into()),
            Method::ExtraGradient => {
                let (bound, label) = match class {
                    ProblemClass::StronglyMonotone => (e / (4.0 * l), "e/(4L)"),
                    ProblemClass::Monotone => (e / (2.0 * l), "e/(2L)"),
                    ProblemClass::Minty => (e / (3.0 * l), "e/(3L)"),
                };
                if self.gamma > bound * slack {
                    return reject(format!("gamma = {} exceeds {label} = {bound}", self.gamma));
                }
                Ok(())
            }
            Method::SingleCallMomentum => {
                let bound = e / (10.0 * l);
                if self.gamma > bound * slack {
                    return reject(format!("gamma = {} exceeds e/(10L) = {bound}", self.gamma));
                }
                if self.eta > e * self.anchor_prob * slack {
                    return reject(format!(
                        "eta = {} exceeds e*p = {}",
                        self.eta,
                        e * self.anchor_prob
                    ));
                }
                if self.anchor_prob > 0.25 {
                    return reject(format!("anchor_prob = {} exceeds 1/4", self.anchor_prob));
                }
                Ok(())
            }
        }
    }
}

/// Mutable state shared by the step functions of one run.
#[derive(Debug, Clone)]
pub struct StepContext<'a> {
    pub problem: &'a SaddleProblem,
    pub scaling: ScalingState,
    pub streams: RunStreams,
    pub counters: OracleCounters,
    pub batch: u32,
}

impl<'a> StepContext<'a> {
    pub fn new(
        problem: &'a SaddleProblem,
        scaling: ScalingState,
        seed: u64,
        batch: u32,
    ) -> Result<Self> {
        let (dx, dy) = problem.dims();
        if scaling.dims() != (dx, dy) {
            return Err(Error::DimensionMismatch {
                expected_x: dx,
                expected_y: dy,
                got_x: scaling.dims().0,
                got_y: scaling.dims().1,
            });
        }
        Ok(StepContext {
            problem,
            scaling,
            streams: RunStreams::new(seed),
            counters: OracleCounters::default(),
            batch,
        })
    }

    fn sample(&mut self) -> OracleSample {
        OracleSample::new(self.streams.next_sample_seed(), self.batch)
    }

    fn gradient(&mut self, z: &PointPair) -> Result<(FieldValue, OracleSample)> {
        let s = self.sample();
        let g = self.problem.gradient(z, s, &mut self.counters)?;
        Ok((g, s))
    }

    /// Refreshes the scaling from curvature at `z`; returns whether the rule fired.
    fn refresh(&mut self, z: &PointPair, g: &FieldValue, sample: OracleSample) -> Result<bool> {
        let h = self.scaling.curvature(
            self.problem,
            z,
            g,
            sample,
            &mut self.streams.rademacher,
            &mut self.counters,
        )?;
        self.scaling.update(&h, &mut self.streams.precond_skip)
    }

    /// `z - gamma D_hat^{-1} g`: x descends, y ascends (`g` holds `-grad_y f`).
    fn descend(&self, z: &PointPair, g: &FieldValue, gamma: f64) -> PointPair {
        let s = self.scaling.apply_inverse(g);
        z.offset(-gamma, &s.gx, &s.gy_neg)
    }
}

fn check_finite(z: &PointPair) -> Result<()> {
    if !z.is_finite() || z.norm() > DIVERGENCE_NORM {
        return Err(Error::NonFinite("iterate"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtraGradStep {
    pub next: PointPair,
    pub half: PointPair,
    pub fired: bool,
}

/// One scaled extra-gradient step. The scaling is updated from the batch drawn
/// at `z` and then used for both half-steps. Two gradient calls.
pub fn step_extragrad(
    ctx: &mut StepContext<'_>,
    z: &PointPair,
    gamma: f64,
) -> Result<ExtraGradStep> {
    let (g, sample) = ctx.gradient(z)?;
    let fired = ctx.refresh(z, &g, sample)?;
    let half = ctx.descend(z, &g, gamma);
    check_finite(&half)?;
    let (g_half, _) = ctx.gradient(&half)?;
    let next = ctx.descend(z, &g_half, gamma);
    check_finite(&next)?;
    Ok(ExtraGradStep { next, half, fired })
}

/// The last half-step point with the gradient and batch drawn there.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleCallCache {
    pub point: PointPair,
    pub grad: FieldValue,
    pub sample: OracleSample,
}

/// Warm start for the single-call method: the gradient at `z0`, whose batch
/// also feeds the first preconditioner refresh. One gradient call.
pub fn warm_start(ctx: &mut StepContext<'_>, z0: &PointPair) -> Result<SingleCallCache> {
    let (grad, sample) = ctx.gradient(z0)?;
    Ok(SingleCallCache {
        point: z0.clone(),
        grad,
        sample,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleCallStep {
    pub next: PointPair,
    pub half: PointPair,
    pub anchor: PointPair,
    pub cache: SingleCallCache,
    pub fired: bool,
}

/// One single-call extra-gradient step with negative momentum toward the
/// anchor `w`. The preconditioner is refreshed from the cached half-step point
/// and its batch. One gradient call.
pub fn step_single_call(
    ctx: &mut StepContext<'_>,
    z: &PointPair,
    anchor: &PointPair,
    cache: &SingleCallCache,
    gamma: f64,
    eta: f64,
    anchor_prob: f64,
) -> Result<SingleCallStep> {
    let fired = ctx.refresh(&cache.point, &cache.grad, cache.sample)?;
    let half = ctx.descend(z, &cache.grad, gamma);
    check_finite(&half)?;
    let (g_half, sample) = ctx.gradient(&half)?;
    let mut next = ctx.descend(z, &g_half, gamma);
    if eta != 0.0 {
        let pull = FieldValue {
            gx: &anchor.x - &z.x,
            gy_neg: &anchor.y - &z.y,
            calls: 0,
        };
        let pull = ctx.scaling.apply_inverse(&pull);
        next = next.offset(eta, &pull.gx, &pull.gy_neg);
    }
    check_finite(&next)?;
    let move_anchor = anchor_prob >= 1.0 || ctx.streams.anchor.random::<f64>() < anchor_prob;
    let anchor = if move_anchor {
        z.clone()
    } else {
        anchor.clone()
    };
    Ok(SingleCallStep {
        next,
        half: half.clone(),
        anchor,
        cache: SingleCallCache {
            point: half,
            grad: g_half,
            sample,
        },
        fired,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdaStep {
    pub next: PointPair,
    pub fired: bool,
}

/// One scaled gradient descent-ascent step. One gradient call.
pub fn step_sgda(ctx: &mut StepContext<'_>, z: &PointPair, gamma: f64) -> Result<SgdaStep> {
    let (g, sample) = ctx.gradient(z)?;
    let fired = ctx.refresh(z, &g, sample)?;
    let next = ctx.descend(z, &g, gamma);
    check_finite(&next)?;
    Ok(SgdaStep { next, fired })
}

/// `z_t` and the point produced at step `t` (the half-step, or `z_{t+1}` for SGDA).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteratePair {
    pub z: PointPair,
    pub half: PointPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<RunRecord>,
    pub final_z: PointPair,
    /// Mean of the half-step iterates (`z0` when no step was taken).
    pub final_avg_uniform: PointPair,
    /// EMA of the half-step iterates (`z0` when no step was taken).
    pub final_avg_ema: PointPair,
    pub grad_calls: u64,
    pub hvp_calls: u64,
    pub final_scaling: ScalingState,
    /// Largest `|z_t - z*|` and `|z_{t+1/2} - z*|` seen, when `z*` is known.
    pub max_dist: Option<f64>,
    /// Largest `|z_t|` seen.
    pub max_norm: f64,
    /// Present when the run was configured with `keep_iterates`.
    pub iterates: Option<Vec<IteratePair>>,
}

impl Trajectory {
    pub fn half_steps(&self) -> Option<Vec<PointPair>> {
        self.iterates
            .as_ref()
            .map(|v| v.iter().map(|p| p.half.clone()).collect())
    }
}

/// Arithmetic mean of the given half-step iterates.
pub fn average_uniform(points: &[PointPair]) -> Result<PointPair> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("average of an empty trajectory"))?;
    let mut acc = first.clone();
    for p in &points[1..] {
        acc.x += &p.x;
        acc.y += &p.y;
    }
    let n = points.len() as f64;
    acc.x /= n;
    acc.y /= n;
    Ok(acc)
}

/// `a_{t+1} = lambda a_t + (1 - lambda) z_{t+1/2}` with `a_0` the first point.
pub fn average_ema(points: &[PointPair], lambda: f64) -> Result<PointPair> {
    let first = points
        .first()
        .ok_or_else(|| Error::invalid("average of an empty trajectory"))?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "EMA decay must lie in [0, 1], got {lambda}"
        )));
    }
    let mut acc = first.clone();
    for p in &points[1..] {
        acc.x = &acc.x * lambda + &p.x * (1.0 - lambda);
        acc.y = &acc.y * lambda + &p.y * (1.0 - lambda);
    }
    Ok(acc)
}

/// Hooks called by [`run_observed`].
pub trait RunObserver {
    fn on_record(&mut self, _record: &RunRecord) -> Result<()> {
        Ok(())
    }

    /// Whether [`RunObserver::on_step`] needs the scaling before each step.
    fn wants_scaling(&self) -> bool {
        false
    }

    /// Called after each step with the scaling before and after its update.
    fn on_step(&mut self, _t: usize, _before: &ScalingState, _after: &ScalingState, _fired: bool) {}
}

struct NoObserver;

impl RunObserver for NoObserver {}

struct Averages {
    count: usize,
    sum: PointPair,
    ema: PointPair,
    lambda: f64,
}

impl Averages {
    fn push(&mut self, p: &PointPair) {
        if self.count == 0 {
            self.ema = p.clone();
            self.sum = p.clone();
        } else {
            self.ema.x = &self.ema.x * self.lambda + &p.x * (1.0 - self.lambda);
            self.ema.y = &self.ema.y * self.lambda + &p.y * (1.0 - self.lambda);
            self.sum.x += &p.x;
            self.sum.y += &p.y;
        }
        self.count += 1;
    }

    fn uniform(&self) -> PointPair {
        let n = self.count.max(1) as f64;
        PointPair {
            x: &self.sum.x / n,
            y: &self.sum.y / n,
        }
    }
}

/// Runs the configured method from `z0`.
pub fn run(
    problem: &SaddleProblem,
    config: &OptimizerConfig,
    z0: &PointPair,
) -> Result<Trajectory> {
    run_observed(problem, config, z0, &mut NoObserver)
}

/// Like [`run`], reporting every record and scaling update to `observer`.
///
/// Record `t` describes `z_t` under the scaling in force after the update of
/// step `t`; `grad_calls` is cumulative after that step, and `gap` is that of
/// the running average including the step's half-step iterate.
pub fn run_observed(
    problem: &SaddleProblem,
    config: &OptimizerConfig,
    z0: &PointPair,
    observer: &mut dyn RunObserver,
) -> Result<Trajectory> {
    config.validate(problem)?;
    let (dx, dy) = problem.dims();
    z0.check_dims(dx, dy)?;
    if !z0.is_finite() {
        return Err(Error::NonFinite("starting point"));
    }
    let scaling = ScalingState::new(config.scaling, dx, dy)?;
    let mut ctx = StepContext::new(problem, scaling, config.seed, config.batch)?;
    let gap_eval = match (config.gap_radius, config.averaging) {
        (Some(_), Averaging::Uniform | Averaging::Ema { .. }) => GapEvaluator::new(problem).ok(),
        _ => None,
    };
    let z_star = problem.z_star().cloned();
    let mut traj = Trajectory {
        records: Vec::with_capacity(config.iterations),
        final_z: z0.clone(),
        final_avg_uniform: z0.clone(),
        final_avg_ema: z0.clone(),
        grad_calls: 0,
        hvp_calls: 0,
        final_scaling: ctx.scaling.clone(),
        max_dist: z_star.as_ref().map(|zs| z0.dist_sq(zs).sqrt()),
        max_norm: z0.norm(),
        iterates: config.keep_iterates.then(Vec::new),
    };
    let mut avg = Averages {
        count: 0,
        sum: z0.clone(),
        ema: z0.clone(),
        lambda: config.averaging.ema_decay(),
    };
    let mut z = z0.clone();
    let mut anchor = z0.clone();
    let mut cache = if config.method == Method::SingleCallMomentum {
        Some(warm_start(&mut ctx, z0)?)
    } else {
        None
    };
    let wants_scaling = observer.wants_scaling();

    for t in 0..config.iterations {
        let before = wants_scaling.then(|| ctx.scaling.clone());
        let step = match config.method {
            Method::ExtraGradient => {
                step_extragrad(&mut ctx, &z, config.gamma).map(|s| (s.next, s.half, s.fired))
            }
            Method::Sgda => {
                step_sgda(&mut ctx, &z, config.gamma).map(|s| (s.next.clone(), s.next, s.fired))
            }
            Method::SingleCallMomentum => {
                let c = cache.as_ref().expect("single-call cache is initialized");
                step_single_call(
                    &mut ctx,
                    &z,
                    &anchor,
                    c,
                    config.gamma,
                    config.eta,
                    config.anchor_prob,
                )
                .map(|s| {
                    anchor = s.anchor;
                    cache = Some(s.cache);
                    (s.next, s.half, s.fired)
                })
            }
        };
        let (next, half, fired) = match step {
            Ok(s) => s,
            Err(Error::NonFinite(_)) => {
                traj.final_z = z;
                traj.final_avg_uniform = avg.uniform();
                traj.final_avg_ema = avg.ema.clone();
                traj.grad_calls = ctx.counters.grad;
                traj.hvp_calls = ctx.counters.hvp;
                traj.final_scaling = ctx.scaling;
                return Err(Error::Divergence {
                    t,
                    partial: Box::new(traj),
                });
            }
            Err(e) => return Err(e),
        };
        if let Some(b) = &before {
            observer.on_step(t, b, &ctx.scaling, fired);
        }
        avg.push(&half);

        let grad_norm2 = problem.field(&z)?.norm_sq();
        let (dist2, r2) = match &z_star {
            Some(zs) => {
                let d = z.dist_sq(zs);
                let h = half.dist_sq(zs);
                let m = traj.max_dist.unwrap_or(0.0);
                traj.max_dist = Some(m.max(d.sqrt()).max(h.sqrt()));
                (d, weighted_dist_sq(&z, Some(zs), &ctx.scaling)?)
            }
            None => (f64::NAN, f64::NAN),
        };
        traj.max_norm = traj.max_norm.max(z.norm());
        let gap = match (&gap_eval, config.gap_radius) {
            (Some(ev), Some(r)) => {
                let a = match config.averaging {
                    Averaging::Ema { .. } => avg.ema.clone(),
                    _ => avg.uniform(),
                };
                Some(ev.gap(&a, r)?)
            }
            _ => None,
        };
        let record = RunRecord {
            t,
            r2_weighted: r2,
            dist2,
            grad_norm2,
            gap,
            dhat_min: ctx.scaling.clipped_min(),
            dhat_max: ctx.scaling.clipped_max(),
            grad_calls: ctx.counters.grad,
        };
        observer.on_record(&record)?;
        traj.records.push(record);
        if let Some(it) = traj.iterates.as_mut() {
            it.push(IteratePair { z: z.clone(), half });
        }
        z = next;
    }

    if let Some(zs) = &z_star {
        let m = traj.max_dist.unwrap_or(0.0);
        traj.max_dist = Some(m.max(z.dist_sq(zs).sqrt()));
    }
    traj.max_norm = traj.max_norm.max(z.norm());
    traj.final_z = z;
    if avg.count > 0 {
        traj.final_avg_uniform = avg.uniform();
        traj.final_avg_ema = avg.ema;
    }
    traj.grad_calls = ctx.counters.grad;
    traj.hvp_calls = ctx.counters.hvp;
    traj.final_scaling = ctx.scaling;
    Ok(traj)
}
