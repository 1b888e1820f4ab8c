//! Suite configuration: a single JSON document.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use saddle_scale_core::optim::{Averaging, Method, OptimizerConfig};
use saddle_scale_core::precond::{ClipMode, ScalingConfig, UpdateCadence};
use saddle_scale_core::problems::{make_bilinear, make_minty, make_quadratic, SaddleProblem};
use saddle_scale_core::rng::derive_seed;
use saddle_scale_core::PointPair;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEFAULT_MASTER_SEED: u64 = 42;

fn default_master_seed() -> u64 {
    DEFAULT_MASTER_SEED
}

fn default_repeats() -> u32 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_anchor_prob() -> f64 {
    1.0
}

fn default_batch() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub name: String,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    /// Independent seeds per (problem, optimizer) cell.
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub problems: Vec<ProblemSpec>,
    pub optimizers: Vec<OptimizerSpec>,
    #[serde(default)]
    pub start: StartSpec,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Random strongly monotone quadratic with known spectrum bounds.
    Quadratic {
        name: String,
        dx: usize,
        dy: usize,
        mu: f64,
        lipschitz: f64,
        #[serde(default)]
        sigma: f64,
        seed: Option<u64>,
    },
    /// Square bilinear game `x'By`.
    Bilinear {
        name: String,
        d: usize,
        lipschitz: f64,
        #[serde(default)]
        sigma: f64,
        seed: Option<u64>,
    },
    /// One-dimensional non-monotone problem satisfying the Minty condition.
    Minty {
        name: String,
        #[serde(default)]
        sigma: f64,
        seed: Option<u64>,
    },
}

impl ProblemSpec {
    pub fn name(&self) -> &str {
        match self {
            ProblemSpec::Quadratic { name, .. }
            | ProblemSpec::Bilinear { name, .. }
            | ProblemSpec::Minty { name, .. } => name,
        }
    }

    fn seed_mut(&mut self) -> &mut Option<u64> {
        match self {
            ProblemSpec::Quadratic { seed, .. }
            | ProblemSpec::Bilinear { seed, .. }
            | ProblemSpec::Minty { seed, .. } => seed,
        }
    }

    /// Builds the problem; the seed must already be resolved.
    pub fn build(&self) -> Result<SaddleProblem> {
        let p = match *self {
            ProblemSpec::Quadratic {
                dx,
                dy,
                mu,
                lipschitz,
                sigma,
                seed,
                ..
            } => make_quadratic(dx, dy, mu, lipschitz, seed.unwrap_or_default())?
                .with_noise(sigma)?,
            ProblemSpec::Bilinear {
                d,
                lipschitz,
                sigma,
                seed,
                ..
            } => make_bilinear(d, lipschitz, seed.unwrap_or_default())?.with_noise(sigma)?,
            ProblemSpec::Minty { sigma, seed, .. } => {
                make_minty(seed.unwrap_or_default())?.with_noise(sigma)?
            }
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum MethodSpec {
    Extragrad,
    SingleCallMomentum,
    Sgda,
}

impl From<MethodSpec> for Method {
    fn from(m: MethodSpec) -> Self {
        match m {
            MethodSpec::Extragrad => Method::ExtraGradient,
            MethodSpec::SingleCallMomentum => Method::SingleCallMomentum,
            MethodSpec::Sgda => Method::Sgda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum PresetSpec {
    Adam,
    Rmsprop,
    Adahessian,
    Oasis,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ClipSpec {
    Max,
    AbsPlusFloor,
}

/// A preset with optional overrides. After resolution every field is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ScalingSpec {
    pub preset: PresetSpec,
    pub beta: Option<f64>,
    pub floor: Option<f64>,
    /// Probability that an update fires; exclusive with `update_every`.
    pub update_prob: Option<f64>,
    /// Fire deterministically every k iterations; exclusive with `update_prob`.
    pub update_every: Option<u64>,
    pub clip: Option<ClipSpec>,
}

impl ScalingSpec {
    pub fn to_config(&self) -> Result<ScalingConfig> {
        let mut c = match self.preset {
            PresetSpec::Adam => ScalingConfig::adam(),
            PresetSpec::Rmsprop => ScalingConfig::rmsprop(),
            PresetSpec::Adahessian => ScalingConfig::adahessian(),
            PresetSpec::Oasis => ScalingConfig::oasis(),
            PresetSpec::Identity => ScalingConfig::identity(),
        };
        if let Some(b) = self.beta {
            c = c.with_beta(b);
        }
        if let Some(f) = self.floor {
            c = c.with_floor(f);
        }
        match (self.update_prob, self.update_every) {
            (Some(_), Some(_)) => {
                bail!("scaling: update_prob and update_every are mutually exclusive")
            }
            (Some(p), None) => c = c.with_cadence(UpdateCadence::Probabilistic { p }),
            (None, Some(k)) => c = c.with_cadence(UpdateCadence::EveryK { k }),
            (None, None) => {}
        }
        if let Some(clip) = self.clip {
            c = c.with_clip(match clip {
                ClipSpec::Max => ClipMode::Max,
                ClipSpec::AbsPlusFloor => ClipMode::AbsPlusFloor,
            });
        }
        c.validate()?;
        Ok(c)
    }

    fn resolve(&mut self) -> Result<()> {
        let c = self.to_config()?;
        self.beta = Some(c.beta);
        self.floor = Some(c.floor);
        match c.cadence {
            UpdateCadence::Probabilistic { p } => self.update_prob = Some(p),
            UpdateCadence::EveryK { k } => self.update_every = Some(k),
        }
        self.clip = Some(match c.clip {
            ClipMode::Max => ClipSpec::Max,
            ClipMode::AbsPlusFloor => ClipSpec::AbsPlusFloor,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingSpec {
    None,
    Uniform,
    Ema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub name: String,
    pub method: MethodSpec,
    pub gamma: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_anchor_prob")]
    pub anchor_prob: f64,
    pub scaling: ScalingSpec,
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch: u32,
    #[serde(default = "default_averaging")]
    pub averaging: AveragingSpec,
    /// EMA decay; defaults to 0.999.
    pub ema_lambda: Option<f64>,
    /// Reject step sizes outside the guarantee for the problem's class.
    #[serde(default)]
    pub theory_safe: bool,
    /// Radius of the balls around the solution for the per-record gap.
    pub gap_radius: Option<f64>,
    /// A divergence abort in this optimizer's cells is the expected outcome.
    #[serde(default)]
    pub expect_divergence: bool,
}

fn default_averaging() -> AveragingSpec {
    AveragingSpec::Uniform
}

impl OptimizerSpec {
    pub fn to_config(&self, problem: &SaddleProblem, seed: u64) -> Result<OptimizerConfig> {
        let lambda = self
            .ema_lambda
            .unwrap_or(saddle_scale_core::optim::DEFAULT_EMA_DECAY);
        let mut c = OptimizerConfig::new(
            self.method.into(),
            self.gamma,
            self.scaling.to_config()?,
            self.iterations,
        )
        .with_seed(seed)
        .with_batch(self.batch)
        .with_momentum(self.eta, self.anchor_prob)
        .with_averaging(match self.averaging {
            AveragingSpec::None => Averaging::None,
            AveragingSpec::Uniform => Averaging::Uniform,
            AveragingSpec::Ema => Averaging::Ema { lambda },
        });
        c.gap_radius = self.gap_radius;
        if self.theory_safe {
            c = c.theory_safe(problem.class());
        }
        c.validate(problem)?;
        Ok(c)
    }
}

/// Starting point for every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StartSpec {
    /// `z* + shift` on x and `z* - shift` on y (origin when `z*` is unknown).
    Offset {
        shift: f64,
    },
    Zeros,
    Point {
        x: Vec<f64>,
        y: Vec<f64>,
    },
}

impl Default for StartSpec {
    fn default() -> Self {
        StartSpec::Offset { shift: 1.0 }
    }
}

impl StartSpec {
    pub fn point(&self, problem: &SaddleProblem) -> Result<PointPair> {
        let (dx, dy) = problem.dims();
        Ok(match self {
            StartSpec::Offset { shift } => {
                let base = problem
                    .z_star()
                    .cloned()
                    .unwrap_or_else(|| PointPair::zeros(dx, dy));
                PointPair::new(base.x.add_scalar(*shift), base.y.add_scalar(-*shift))?
            }
            StartSpec::Zeros => PointPair::zeros(dx, dy),
            StartSpec::Point { x, y } => {
                if x.len() != dx || y.len() != dy {
                    bail!(
                        "start point has dimensions ({}, {}), problem needs ({dx}, {dy})",
                        x.len(),
                        y.len()
                    );
                }
                PointPair::from_slices(x, y)?
            }
        })
    }
}

/// Pass/fail conditions evaluated on matching cells. Unset names match all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CheckSpec {
    /// Final `|z_T - z*|^2` at most `value`.
    FinalDist2Below {
        value: f64,
        problem: Option<String>,
        optimizer: Option<String>,
    },
    /// Final `|F(z_T)|^2` at most `value`.
    FinalGradNorm2Below {
        value: f64,
        problem: Option<String>,
        optimizer: Option<String>,
    },
    /// Deterministic strongly monotone per-step contraction.
    Contraction {
        problem: Option<String>,
        optimizer: Option<String>,
    },
}

impl CheckSpec {
    pub fn matches(&self, problem: &str, optimizer: &str) -> bool {
        let (p, o) = match self {
            CheckSpec::FinalDist2Below {
                problem, optimizer, ..
            }
            | CheckSpec::FinalGradNorm2Below {
                problem, optimizer, ..
            }
            | CheckSpec::Contraction { problem, optimizer } => (problem, optimizer),
        };
        p.as_deref().is_none_or(|n| n == problem) && o.as_deref().is_none_or(|n| n == optimizer)
    }

    pub fn label(&self) -> &'static str {
        match self {
            CheckSpec::FinalDist2Below { .. } => "final-dist2-below",
            CheckSpec::FinalGradNorm2Below { .. } => "final-grad-norm2-below",
            CheckSpec::Contraction { .. } => "contraction",
        }
    }
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SuiteConfig = serde_json::from_str(text)?;
        cfg.resolve()
    }

    /// Fills every default so the config can be echoed and replayed verbatim,
    /// and validates names and per-cell settings.
    pub fn resolve(mut self) -> Result<Self> {
        if self.problems.is_empty() || self.optimizers.is_empty() {
            bail!("config needs at least one problem and one optimizer");
        }
        if self.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        let master = self.master_seed;
        for (i, p) in self.problems.iter_mut().enumerate() {
            p.seed_mut()
                .get_or_insert(derive_seed(master, 1_000_000 + i as u64));
        }
        for o in &mut self.optimizers {
            o.scaling
                .resolve()
                .with_context(|| format!("optimizer '{}'", o.name))?;
            if o.averaging == AveragingSpec::Ema {
                o.ema_lambda
                    .get_or_insert(saddle_scale_core::optim::DEFAULT_EMA_DECAY);
            }
        }
        check_unique("problem", self.problems.iter().map(|p| p.name()))?;
        check_unique("optimizer", self.optimizers.iter().map(|o| o.name.as_str()))?;
        for p in &self.problems {
            let problem = p
                .build()
                .with_context(|| format!("problem '{}'", p.name()))?;
            self.start.point(&problem)?;
            for o in &self.optimizers {
                o.to_config(&problem, 0)
                    .with_context(|| format!("optimizer '{}' on problem '{}'", o.name, p.name()))?;
            }
        }
        Ok(self)
    }

    /// Hex SHA-256 of the canonical resolved config.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn cell_count(&self) -> usize {
        self.problems.len() * self.optimizers.len() * self.repeats as usize
    }
}

fn check_unique<'a>(what: &str, names: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if n.is_empty() || n.contains(['/', '\\']) {
            bail!("{what} name '{n}' must be non-empty and contain no path separators");
        }
        if !seen.insert(n) {
            bail!("duplicate {what} name '{n}'");
        }
    }
    Ok(())
}

/// JSON schema of [`SuiteConfig`].
pub fn schema() -> serde_json::Value {
    serde_json::to_value(schemars::schema_for!(SuiteConfig)).expect("schema serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "mini",
        "problems": [{"kind": "quadratic", "name": "q", "dx": 2, "dy": 2, "mu": 0.5, "lipschitz": 2.0}],
        "optimizers": [{"name": "eg", "method": "extragrad", "gamma": 0.001,
                        "scaling": {"preset": "oasis"}, "iterations": 10}]
    }"#;

    #[test]
    fn defaults_are_resolved() {
        let c = SuiteConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.master_seed, 42);
        assert_eq!(c.repeats, 1);
        let o = &c.optimizers[0];
        assert_eq!(o.scaling.beta, Some(0.999));
        assert_eq!(o.scaling.floor, Some(0.01));
        assert_eq!(o.scaling.update_prob, Some(1.0));
        assert!(matches!(
            c.problems[0],
            ProblemSpec::Quadratic { seed: Some(_), .. }
        ));
        // resolving twice is a fixed point, so the echoed config replays exactly
        let again = SuiteConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.digest(), c.digest());
    }

    #[test]
    fn missing_gamma_is_named() {
        let text = MINIMAL.replace(r#""gamma": 0.001,"#, "");
        let err = format!("{:#}", SuiteConfig::parse(&text).unwrap_err());
        assert!(err.contains("gamma"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn rejects_unknown_fields_and_duplicates() {
        let typo = MINIMAL.replace("\"iterations\"", "\"iteration\"");
        assert!(SuiteConfig::parse(&typo).is_err());
        let dup = MINIMAL.replace(
            r#""optimizers": ["#,
            r#""optimizers": [{"name": "eg", "method": "sgda", "gamma": 0.1, "scaling": {"preset": "identity"}, "iterations": 1},"#,
        );
        assert!(format!("{:#}", SuiteConfig::parse(&dup).unwrap_err()).contains("duplicate"));
    }

    #[test]
    fn theory_safe_is_checked_at_load() {
        let unsafe_step = MINIMAL.replace(
            r#""gamma": 0.001,"#,
            r#""gamma": 0.1, "theory_safe": true,"#,
        );
        assert!(SuiteConfig::parse(&unsafe_step).is_err());
    }

    #[test]
    fn schema_lists_fields() {
        let s = schema().to_string();
        for field in [
            "master_seed",
            "expect_divergence",
            "update_every",
            "gap_radius",
        ] {
            assert!(s.contains(field), "{field}");
        }
    }
}
