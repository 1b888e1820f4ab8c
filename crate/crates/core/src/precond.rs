//! Diagonal preconditioners.
//!
//! A [`ScalingState`] tracks raw diagonals `D` (stored squared for the
//! squared-EMA rule), updates them from a curvature estimate with either
//! `D^2 <- b D^2 + (1-b) H^2` or `D <- b D + (1-b) H`, optionally skips
//! updates at random, and clips `D_hat = max(e, |D|)` so the scaled gradient
//! `D_hat^{-1} g` is always well defined.

use log::warn;
use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::{FieldValue, OracleCounters, PointPair};
use crate::problems::{OracleSample, SaddleProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmaRule {
    /// `D^2 <- b D^2 + (1 - b) H^2` (Adam, RMSProp, AdaHessian).
    SquaredEma,
    /// `D <- b D + (1 - b) H` (OASIS).
    AdditiveEma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureSource {
    /// Squared stochastic gradient entries.
    GradSquare,
    /// Rademacher probe `v * (H v)` of the Hessian diagonal.
    Hutchinson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaSchedule {
    Constant,
    AdamDebias,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// `max(e, |D|)`.
    Max,
    /// `|D| + e`.
    AbsPlusFloor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum UpdateCadence {
    /// Update with probability `p` each iteration (one draw shared by both blocks).
    Probabilistic { p: f64 },
    /// Update deterministically on iterations `0, k, 2k, ...`.
    EveryK { k: u64 },
}

impl UpdateCadence {
    /// Long-run fraction of iterations that update.
    pub fn rate(&self) -> f64 {
        match *self {
            UpdateCadence::Probabilistic { p } => p,
            UpdateCadence::EveryK { k } => 1.0 / k as f64,
        }
    }
}

/// Static description of a scaling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub rule: EmaRule,
    pub source: CurvatureSource,
    pub schedule: BetaSchedule,
    pub beta: f64,
    pub floor: f64,
    pub cadence: UpdateCadence,
    pub clip: ClipMode,
}

pub const DEFAULT_BETA: f64 = 0.999;
pub const DEFAULT_FLOOR_GRAD_SQUARE: f64 = 1e-8;
pub const DEFAULT_FLOOR_HUTCHINSON: f64 = 0.01;

impl ScalingConfig {
    pub fn adam() -> Self {
        Self::preset(
            EmaRule::SquaredEma,
            CurvatureSource::GradSquare,
            BetaSchedule::AdamDebias,
        )
    }

    pub fn rmsprop() -> Self {
        Self::preset(
            EmaRule::SquaredEma,
            CurvatureSource::GradSquare,
            BetaSchedule::Constant,
        )
    }

    pub fn adahessian() -> Self {
        Self::preset(
            EmaRule::SquaredEma,
            CurvatureSource::Hutchinson,
            BetaSchedule::AdamDebias,
        )
    }

    pub fn oasis() -> Self {
        Self::preset(
            EmaRule::AdditiveEma,
            CurvatureSource::Hutchinson,
            BetaSchedule::Constant,
        )
    }

    /// Frozen unit scaling; combine with [`ScalingState::identity`].
    pub fn identity() -> Self {
        ScalingConfig {
            rule: EmaRule::SquaredEma,
            source: CurvatureSource::GradSquare,
            schedule: BetaSchedule::Constant,
            beta: 1.0,
            floor: 1.0,
            cadence: UpdateCadence::Probabilistic { p: 1.0 },
            clip: ClipMode::Max,
        }
    }

    fn preset(rule: EmaRule, source: CurvatureSource, schedule: BetaSchedule) -> Self {
        let floor = match source {
            CurvatureSource::GradSquare => DEFAULT_FLOOR_GRAD_SQUARE,
            CurvatureSource::Hutchinson => DEFAULT_FLOOR_HUTCHINSON,
        };
        ScalingConfig {
            rule,
            source,
            schedule,
            beta: DEFAULT_BETA,
            floor,
            cadence: UpdateCadence::Probabilistic { p: 1.0 },
            clip: ClipMode::Max,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn with_cadence(mut self, cadence: UpdateCadence) -> Self {
        self.cadence = cadence;
        self
    }

    pub fn with_clip(mut self, clip: ClipMode) -> Self {
        self.clip = clip;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::invalid(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if !(self.floor > 0.0) || !self.floor.is_finite() {
            return Err(Error::invalid(format!(
                "floor e must be positive, got {}",
                self.floor
            )));
        }
        match self.cadence {
            UpdateCadence::Probabilistic { p } if !(p > 0.0 && p <= 1.0) => Err(Error::invalid(
                format!("update probability must lie in (0, 1], got {p}"),
            )),
            UpdateCadence::EveryK { k: 0 } => Err(Error::invalid("update_every_k must be >= 1")),
            _ => Ok(()),
        }
    }

    /// The constant `C` multiplying `(1 - beta_t)` in the per-step growth of `D_hat`.
    pub fn growth_constant(&self, gamma: f64, p: f64) -> f64 {
        let e = self.floor;
        match self.rule {
            EmaRule::SquaredEma => p * gamma * gamma / (2.0 * e * e),
            EmaRule::AdditiveEma => 2.0 * p * gamma / e,
        }
    }
}

/// `beta_t` for the given schedule. `AdamDebias` gives
/// `(beta - beta^{t+1}) / (1 - beta^{t+1})`, which is `0` at `t = 0`.
pub fn beta_t(schedule: BetaSchedule, beta: f64, t: u64) -> f64 {
    match schedule {
        BetaSchedule::Constant => beta,
        BetaSchedule::AdamDebias => {
            if beta >= 1.0 {
                warn!("adam-debias schedule with beta = 1 is 0/0; using the limit 1");
                return 1.0;
            }
            let bt = beta.powf(t as f64 + 1.0);
            ((beta - bt) / (1.0 - bt)).clamp(0.0, 1.0)
        }
    }
}

/// Per-coordinate curvature input to one update.
///
/// Holds squared entries (non-negative) when feeding the squared-EMA rule and
/// signed diagonal estimates when feeding the additive rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureDiag {
    pub hx: DVector<f64>,
    pub hy: DVector<f64>,
}

impl CurvatureDiag {
    pub fn squared(&self) -> CurvatureDiag {
        CurvatureDiag {
            hx: self.hx.map(|v| v * v),
            hy: self.hy.map(|v| v * v),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.hx.amax().max(self.hy.amax())
    }
}

/// `(g_x^2, g_y^2)` entrywise.
pub fn curvature_grad_square(g: &FieldValue) -> CurvatureDiag {
    CurvatureDiag {
        hx: g.gx.map(|v| v * v),
        hy: g.gy_neg.map(|v| v * v),
    }
}

pub fn rademacher<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Hutchinson estimate `v * (H v)` of the diagonal Jacobian blocks, with
/// independent Rademacher probes for the two blocks.
pub fn curvature_hutchinson<R: Rng + ?Sized>(
    problem: &SaddleProblem,
    z: &PointPair,
    sample: OracleSample,
    rng: &mut R,
    counters: &mut OracleCounters,
) -> Result<CurvatureDiag> {
    let (dx, dy) = problem.dims();
    let vx = rademacher(dx, rng);
    let vy = rademacher(dy, rng);
    let (hvx, hvy) = problem.hvp(z, &vx, &vy, sample, counters)?;
    Ok(CurvatureDiag {
        hx: vx.component_mul(&hvx),
        hy: vy.component_mul(&hvy),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingState {
    #[serde(flatten)]
    pub config: ScalingConfig,
    /// Raw diagonals; squared (`D^2`) under the squared-EMA rule.
    pub raw_x: DVector<f64>,
    pub raw_y: DVector<f64>,
    pub clipped_x: DVector<f64>,
    pub clipped_y: DVector<f64>,
    /// Number of update opportunities so far, fired or skipped.
    pub t: u64,
}

impl ScalingState {
    /// Zero raw diagonals, so `D_hat = e I` until the first update.
    pub fn new(config: ScalingConfig, dx: usize, dy: usize) -> Result<Self> {
        config.validate()?;
        let mut s = ScalingState {
            config,
            raw_x: DVector::zeros(dx),
            raw_y: DVector::zeros(dy),
            clipped_x: DVector::zeros(dx),
            clipped_y: DVector::zeros(dy),
            t: 0,
        };
        s.reclip();
        Ok(s)
    }

    /// Unit scaling that never changes.
    pub fn identity(dx: usize, dy: usize) -> Self {
        let mut s = Self::new(ScalingConfig::identity(), dx, dy).expect("identity config is valid");
        s.raw_x.fill(1.0);
        s.raw_y.fill(1.0);
        s.reclip();
        s
    }

    /// Overwrites the raw diagonals (squared values under the squared-EMA rule).
    pub fn with_raw(mut self, raw_x: DVector<f64>, raw_y: DVector<f64>) -> Result<Self> {
        if raw_x.len() != self.raw_x.len() || raw_y.len() != self.raw_y.len() {
            return Err(self.shape_error(raw_x.len(), raw_y.len()));
        }
        self.raw_x = raw_x;
        self.raw_y = raw_y;
        self.reclip();
        Ok(self)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.raw_x.len(), self.raw_y.len())
    }

    pub fn floor(&self) -> f64 {
        self.config.floor
    }

    fn shape_error(&self, gx: usize, gy: usize) -> Error {
        Error::DimensionMismatch {
            expected_x: self.raw_x.len(),
            expected_y: self.raw_y.len(),
            got_x: gx,
            got_y: gy,
        }
    }

    /// The signed diagonal `D` (square root of the stored value for squared-EMA).
    pub fn diag_x(&self) -> DVector<f64> {
        self.diag_of(&self.raw_x)
    }

    pub fn diag_y(&self) -> DVector<f64> {
        self.diag_of(&self.raw_y)
    }

    fn diag_of(&self, raw: &DVector<f64>) -> DVector<f64> {
        match self.config.rule {
            EmaRule::SquaredEma => raw.map(|v| v.max(0.0).sqrt()),
            EmaRule::AdditiveEma => raw.clone(),
        }
    }

    pub fn clip_value(&self, d: f64) -> f64 {
        match self.config.clip {
            ClipMode::Max => self.config.floor.max(d.abs()),
            ClipMode::AbsPlusFloor => d.abs() + self.config.floor,
        }
    }

    fn reclip(&mut self) {
        self.clipped_x = self.diag_x().map(|d| self.clip_value(d));
        self.clipped_y = self.diag_y().map(|d| self.clip_value(d));
    }

    /// `beta_t` the next update will use.
    pub fn next_beta(&self) -> f64 {
        beta_t(self.config.schedule, self.config.beta, self.t)
    }

    fn fires<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        match self.config.cadence {
            UpdateCadence::Probabilistic { p } if p >= 1.0 => true,
            UpdateCadence::Probabilistic { p } => rng.random::<f64>() < p,
            UpdateCadence::EveryK { k } => self.t.is_multiple_of(k),
        }
    }

    /// Applies one update opportunity. `rng` is the skip stream and is only
    /// consumed when `p < 1`. Returns whether the rule fired; `t` advances
    /// either way so the debias schedule depends only on the iteration count.
    pub fn update<R: Rng + ?Sized>(&mut self, h: &CurvatureDiag, rng: &mut R) -> Result<bool> {
        if h.hx.len() != self.raw_x.len() || h.hy.len() != self.raw_y.len() {
            return Err(self.shape_error(h.hx.len(), h.hy.len()));
        }
        if h.hx.iter().chain(h.hy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curvature"));
        }
        if self.config.rule == EmaRule::SquaredEma
            && h.hx.iter().chain(h.hy.iter()).any(|&v| v < 0.0)
        {
            return Err(Error::invalid(
                "squared-EMA curvature input must be non-negative",
            ));
        }
        let fired = self.fires(rng);
        if fired {
            let b = self.next_beta();
            self.raw_x = &self.raw_x * b + &h.hx * (1.0 - b);
            self.raw_y = &self.raw_y * b + &h.hy * (1.0 - b);
            self.reclip();
        }
        self.t += 1;
        Ok(fired)
    }

    /// Curvature input for this state's rule and source, computed at `z`
    /// from the gradient `g` evaluated there (grad-square) or from a
    /// Hutchinson probe drawn from `rademacher_rng`.
    pub fn curvature<R: Rng + ?Sized>(
        &self,
        problem: &SaddleProblem,
        z: &PointPair,
        g: &FieldValue,
        sample: OracleSample,
        rademacher_rng: &mut R,
        counters: &mut OracleCounters,
    ) -> Result<CurvatureDiag> {
        match self.config.source {
            CurvatureSource::GradSquare => Ok(curvature_grad_square(g)),
            CurvatureSource::Hutchinson => {
                let h = curvature_hutchinson(problem, z, sample, rademacher_rng, counters)?;
                Ok(match self.config.rule {
                    EmaRule::SquaredEma => h.squared(),
                    EmaRule::AdditiveEma => h,
                })
            }
        }
    }

    /// `D_hat^{-1} g`, blockwise. Keeps the call count of `g`.
    pub fn apply_inverse(&self, g: &FieldValue) -> FieldValue {
        FieldValue {
            gx: g.gx.component_div(&self.clipped_x),
            gy_neg: g.gy_neg.component_div(&self.clipped_y),
            calls: g.calls,
        }
    }

    pub fn clipped_min(&self) -> f64 {
        self.clipped_x.min().min(self.clipped_y.min())
    }

    pub fn clipped_max(&self) -> f64 {
        self.clipped_x.max().max(self.clipped_y.max())
    }

    /// Bound on `D_hat_{t+1} / D_hat_t` in expectation over the update draw:
    /// `1 + (1 - b) p G^2 / (2 e^2)` (squared) or `1 + 2 (1 - b) p G / e` (additive),
    /// with `b` the beta of the next update.
    pub fn growth_factor(&self, gamma: f64) -> f64 {
        self.growth_factor_with_prob(gamma, self.config.cadence.rate())
    }

    /// Same bound for a realized update (`p = 1`).
    pub fn growth_factor_realized(&self, gamma: f64) -> f64 {
        self.growth_factor_with_prob(gamma, 1.0)
    }

    fn growth_factor_with_prob(&self, gamma: f64, p: f64) -> f64 {
        1.0 + (1.0 - self.next_beta()) * self.config.growth_constant(gamma, p)
    }
}

/// Upper bound `G` on every curvature input magnitude.
///
/// Hutchinson: `sqrt(d_x + d_y) L`. Grad-square: a certified bound on the
/// stochastic gradient norm over the ball of radius `region_radius` around
/// `z*`, `|F(z*)| + L r + noise_bound`, using that `F` is `L`-Lipschitz.
pub fn gamma_bound(
    source: CurvatureSource,
    problem: &SaddleProblem,
    region_radius: Option<f64>,
) -> Result<f64> {
    let (dx, dy) = problem.dims();
    match source {
        CurvatureSource::Hutchinson => Ok(((dx + dy) as f64).sqrt() * problem.lipschitz()),
        CurvatureSource::GradSquare => {
            let r = region_radius
                .filter(|r| r.is_finite() && *r >= 0.0)
                .ok_or_else(|| {
                    Error::Precondition("grad-square bound needs a finite region radius".into())
                })?;
            let zs = problem.z_star().ok_or_else(|| {
                Error::Precondition("grad-square bound needs a known solution".into())
            })?;
            let f_star = problem.field(zs)?.norm_sq().sqrt();
            Ok(f_star + problem.lipschitz() * r + problem.noise_bound())
        }
    }
}
