use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::driver::{
    InnerStep, PreconditionerSpec, Regularization, SelectionKind, DEFAULT_DIVERGENCE_CAP,
};
use crate::oracles::{InverseEstimator, OracleSpec};
use crate::problems::{
    BilevelNoise, BilevelProblem, CsoOuter, CsoProblem, LogisticProblem, Problem, QuadraticProblem,
};
use crate::schedules::PowerSchedule;
use crate::{Error, Result};

fn default_d() -> usize {
    10
}
fn default_iterations() -> usize {
    100_000
}
fn default_stride() -> usize {
    1
}
fn default_r_draws() -> usize {
    16
}
fn default_cap() -> f64 {
    DEFAULT_DIVERGENCE_CAP
}
fn default_optimizers() -> Vec<PreconditionerSpec> {
    vec![PreconditionerSpec::Adagrad { delta: 0.05 }]
}
fn default_biases() -> Vec<BiasSetting> {
    vec![BiasSetting::Named(BiasName::Unbiased)]
}
fn default_gamma() -> PowerSchedule {
    PowerSchedule::decreasing(0.01, 0.5).expect("valid")
}
fn unit() -> PowerSchedule {
    PowerSchedule::constant(1.0).expect("valid")
}
fn default_inner_step() -> InnerStep {
    InnerStep::Schedule { coeff: 1.0 }
}
fn default_inverse() -> InverseEstimator {
    InverseEstimator::Neumann {
        n: 10,
        range: Default::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// `0.5 |A(theta - c)|^2` with the seeded least-squares matrix.
    Quadratic {
        #[serde(default = "default_d")]
        d: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        radius: Option<f64>,
    },
    Logistic {
        rows: usize,
        d: usize,
        ridge: f64,
        #[serde(default)]
        seed: u64,
    },
    Cso {
        sigma: f64,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_cso_outer")]
        outer: CsoOuter,
    },
    Bilevel {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        noise: BilevelNoise,
    },
}

fn default_cso_outer() -> CsoOuter {
    CsoOuter::Quadratic
}

impl ProblemConfig {
    pub fn is_bilevel(&self) -> bool {
        matches!(self, ProblemConfig::Bilevel { .. })
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemConfig::Quadratic { d, .. } | ProblemConfig::Logistic { d, .. } => *d,
            ProblemConfig::Cso { .. } | ProblemConfig::Bilevel { .. } => 3,
        }
    }

    /// Single-level problem; `None` for bilevel.
    pub fn build(&self) -> Result<Option<Problem>> {
        Ok(Some(match self {
            ProblemConfig::Quadratic { d, seed, radius } => {
                let q = QuadraticProblem::least_squares(*d, *seed)?;
                Problem::Quadratic(match radius {
                    Some(r) => q.with_radius(*r),
                    None => q,
                })
            }
            ProblemConfig::Logistic {
                rows,
                d,
                ridge,
                seed,
            } => Problem::Logistic(LogisticProblem::synthetic(*rows, *d, *ridge, *seed)?),
            ProblemConfig::Cso { sigma, seed, outer } => {
                Problem::Cso(CsoProblem::toy(*sigma, *seed, outer.clone())?)
            }
            ProblemConfig::Bilevel { .. } => return Ok(None),
        }))
    }

    pub fn build_bilevel(&self) -> Result<Option<BilevelProblem>> {
        match self {
            ProblemConfig::Bilevel { seed, noise } => Ok(Some(
                BilevelProblem::quadratic_toy(*seed)?.with_noise(*noise),
            )),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasName {
    Unbiased,
}

/// One entry of the bias grid: `"unbiased"` or a schedule `b_n = coeff n^{-exponent}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BiasSetting {
    Named(BiasName),
    Schedule(PowerSchedule),
}

impl BiasSetting {
    pub fn schedule(&self) -> Option<PowerSchedule> {
        match self {
            BiasSetting::Named(_) => None,
            BiasSetting::Schedule(s) if s.coeff == 0.0 => None,
            BiasSetting::Schedule(s) => Some(*s),
        }
    }

    /// Decay exponent `r`; infinite when unbiased.
    pub fn r(&self) -> f64 {
        match self.schedule() {
            None => f64::INFINITY,
            Some(s) => (-s.signed_exponent()).max(0.0),
        }
    }

    pub fn label(&self) -> String {
        match self.schedule() {
            None => "unbiased".into(),
            Some(s) => format!("r{}c{}", -s.signed_exponent(), s.coeff),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_gamma")]
    pub gamma: PowerSchedule,
    #[serde(default = "unit")]
    pub beta: PowerSchedule,
    #[serde(default = "unit")]
    pub lambda: PowerSchedule,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            gamma: default_gamma(),
            beta: unit(),
            lambda: unit(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMetric {
    GradNormSq,
    VGap,
}

/// Slope band applied to the seed-mean curve of each (optimizer, bias) group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceBand {
    pub metric: BandMetric,
    /// Fit window `[lo, hi]`; defaults to dropping the first 10% of iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
    pub slope_min: f64,
    pub slope_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilevelRunConfig {
    #[serde(default)]
    pub inner_steps: usize,
    #[serde(default = "default_inner_step")]
    pub inner_step: InnerStep,
    #[serde(default = "default_inverse")]
    pub inverse: InverseEstimator,
}

impl Default for BilevelRunConfig {
    fn default() -> Self {
        BilevelRunConfig {
            inner_steps: 1,
            inner_step: default_inner_step(),
            inverse: default_inverse(),
        }
    }
}

/// A full experiment: every optimizer is run against every bias setting and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub seeds: Vec<u64>,
    /// Defaults to all ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub selection: SelectionKind,
    /// Draws of the randomized iterate reported per run.
    #[serde(default = "default_r_draws")]
    pub r_draws: usize,
    /// `sigma2` of the expected-smoothness condition, used by weighted selection.
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma1: Option<f64>,
    #[serde(default)]
    pub clip: bool,
    #[serde(default)]
    pub regularization: Regularization,
    #[serde(default = "default_cap")]
    pub divergence_cap: f64,
    /// Keep every k-th trace row in the CSV (the last row is always kept).
    #[serde(default = "default_stride")]
    pub trace_stride: usize,
    #[serde(default)]
    pub override_admissibility: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the number of seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bilevel: Option<BilevelRunConfig>,
    #[serde(default = "default_optimizers")]
    pub optimizers: Vec<PreconditionerSpec>,
    #[serde(default = "default_biases")]
    pub biases: Vec<BiasSetting>,
    #[serde(default)]
    pub schedules: ScheduleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<AcceptanceBand>,
}

/// Parse and validate a TOML config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        match line {
            Some(l) => Error::Config(format!("line {l}: {}", e.message())),
            None => Error::Config(e.message().to_string()),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("duplicate seed {s}")));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.trace_stride == 0 {
            return Err(Error::Config("trace_stride must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        if self.optimizers.is_empty() || self.biases.is_empty() {
            return Err(Error::Config(
                "optimizers and biases must be nonempty".into(),
            ));
        }
        let s = &self.schedules;
        for (name, sched) in [("gamma", s.gamma), ("beta", s.beta), ("lambda", s.lambda)] {
            sched
                .validate()
                .map_err(|e| Error::Config(format!("schedules.{name}: {e}")))?;
        }
        let sum = s.gamma.exponent + s.lambda.exponent;
        if sum >= 1.0 && !self.override_admissibility {
            return Err(Error::Config(format!(
                "inadmissible schedules: gamma + lambda = {sum} >= 1 (set override_admissibility to force)"
            )));
        }
        for b in &self.biases {
            if let BiasSetting::Schedule(p) = b {
                p.validate()
                    .map_err(|e| Error::Config(format!("bias: {e}")))?;
            }
        }
        if let Some(t) = &self.theta0 {
            if t.len() != self.problem.dim() {
                return Err(Error::Config(format!(
                    "theta0 has length {}, problem dimension is {}",
                    t.len(),
                    self.problem.dim()
                )));
            }
        }
        if let Some(b) = &self.band {
            if !(b.slope_min <= b.slope_max) {
                return Err(Error::Config("band slope_min exceeds slope_max".into()));
            }
        }
        if self.problem.is_bilevel() {
            if self.oracle.is_some() {
                return Err(Error::Config(
                    "bilevel problems take a [bilevel] section, not [oracle]".into(),
                ));
            }
            if self.biases.iter().any(|b| b.schedule().is_some()) {
                return Err(Error::Config(
                    "bilevel runs carry their own bias; only \"unbiased\" may be listed".into(),
                ));
            }
        } else {
            if self.bilevel.is_some() {
                return Err(Error::Config("[bilevel] needs a bilevel problem".into()));
            }
            let oracle = self
                .oracle
                .as_ref()
                .ok_or_else(|| Error::Config("missing [oracle] section".into()))?;
            let biased = self.biases.iter().any(|b| b.schedule().is_some());
            if biased && !oracle.accepts_bias_schedule() {
                return Err(Error::Config(format!(
                    "the {} oracle has intrinsic bias; only \"unbiased\" may be listed",
                    oracle.name()
                )));
            }
        }
        Ok(())
    }

    pub fn problem_kind(&self) -> &'static str {
        match self.problem {
            ProblemConfig::Quadratic { .. } => "quadratic",
            ProblemConfig::Logistic { .. } => "logistic",
            ProblemConfig::Cso { .. } => "cso",
            ProblemConfig::Bilevel { .. } => "bilevel",
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form. Output location and
    /// thread count do not affect results and are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.jobs = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(digest)[..16].to_string()
    }

    pub fn theta0_vector(&self) -> crate::Vector {
        match &self.theta0 {
            Some(t) => crate::Vector::from_column_slice(t),
            None => crate::Vector::from_element(self.problem.dim(), 1.0),
        }
    }
}
