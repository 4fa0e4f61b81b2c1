//! Biased stochastic gradient oracles `H_theta(X)`.

mod bilevel;
mod cso;
mod markov;
mod snis;
mod synthetic;
mod zeroth_order;

pub use bilevel::{
    bilevel_oracle, inner_sgd, neumann_expectation, neumann_sample, neumann_scalar_mean,
    InverseEstimator, NeumannRange,
};
pub use cso::{cso_bias_sq_bound, cso_oracle};
pub use markov::{ar1_conditional_bias, markov_oracle, MarkovStream};
pub use snis::{
    br_snis_estimate, normalize_log_weights, snis_estimate, snis_on_particles, FiniteTarget,
    GaussianShiftTarget, SnisTarget,
};
pub use synthetic::{synthetic_biased_oracle, BiasDirection};
pub use zeroth_order::{zeroth_order_bias_bound, zeroth_order_oracle};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::problems::{Objective, Problem};
use crate::schedules::PowerSchedule;
use crate::{Error, Result, Vector};

/// One oracle draw plus diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    /// `H_theta(X)`.
    pub estimate: Vector,
    /// `grad V(theta)`, when the problem exposes it.
    pub true_gradient: Option<Vector>,
    /// `E[H | F_n] - grad V(theta)`, when known in closed form.
    pub bias_target: Option<Vector>,
    /// Monte Carlo draws consumed.
    pub inner_samples: usize,
}

fn default_noise_var() -> f64 {
    0.01
}

fn default_proposal_scale() -> f64 {
    2.0
}

fn default_chain_start() -> f64 {
    5.0
}

/// Oracle descriptor for single-level problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    /// Exact gradient plus Gaussian noise plus the scheduled bias `b_n u`.
    Synthetic {
        #[serde(default = "default_noise_var")]
        noise_var: f64,
        #[serde(default)]
        direction: BiasDirection,
    },
    /// Gaussian smoothing of the objective value.
    ZerothOrder { tau: f64 },
    /// SNIS estimate of the center of a quadratic from `N(center, I)` via `N(0, scale^2 I)`.
    Snis {
        samples: usize,
        #[serde(default = "default_proposal_scale")]
        proposal_scale: f64,
    },
    /// Bias-reduced SNIS on the same target.
    BrSnis {
        particles: usize,
        burn_in: usize,
        sweeps: usize,
        #[serde(default = "default_proposal_scale")]
        proposal_scale: f64,
    },
    /// `grad V(theta) - x` averaged along a persistent AR(1) chain.
    Markov {
        mixing: f64,
        samples_per_step: usize,
        /// Every coordinate of the chain's initial state.
        #[serde(default = "default_chain_start")]
        start: f64,
    },
    /// Nested estimator for a conditional stochastic problem.
    Cso { inner_samples: usize },
}

impl OracleSpec {
    pub fn name(&self) -> &'static str {
        match self {
            OracleSpec::Synthetic { .. } => "synthetic",
            OracleSpec::ZerothOrder { .. } => "zeroth_order",
            OracleSpec::Snis { .. } => "snis",
            OracleSpec::BrSnis { .. } => "br_snis",
            OracleSpec::Markov { .. } => "markov",
            OracleSpec::Cso { .. } => "cso",
        }
    }

    /// Whether a scheduled bias can be injected.
    pub fn accepts_bias_schedule(&self) -> bool {
        matches!(self, OracleSpec::Synthetic { .. })
    }
}

/// Runtime oracle state for one run.
#[derive(Debug, Clone)]
pub struct Oracle {
    spec: OracleSpec,
    bias: Option<PowerSchedule>,
    chain: Option<MarkovStream>,
}

impl Oracle {
    pub fn new(spec: OracleSpec, problem: &Problem, bias: Option<PowerSchedule>) -> Result<Self> {
        if bias.is_some() && !spec.accepts_bias_schedule() {
            return Err(Error::Config(format!(
                "oracle {} has an intrinsic bias; only \"unbiased\" may be scheduled",
                spec.name()
            )));
        }
        let d = problem.dim();
        let chain = match &spec {
            OracleSpec::Synthetic { noise_var, .. } => {
                if !(noise_var.is_finite() && *noise_var >= 0.0) {
                    return Err(Error::Config(format!(
                        "noise_var must be >= 0, got {noise_var}"
                    )));
                }
                None
            }
            OracleSpec::ZerothOrder { tau } => {
                if !(tau.is_finite() && *tau > 0.0) {
                    return Err(Error::Config(format!("tau must be positive, got {tau}")));
                }
                None
            }
            OracleSpec::Snis {
                samples,
                proposal_scale,
            } => {
                quadratic_center(problem)?;
                GaussianShiftTarget::new(Vector::zeros(d), *proposal_scale)
                    .map_err(|e| Error::Config(e.to_string()))?;
                if *samples == 0 {
                    return Err(Error::Config("snis samples must be >= 1".into()));
                }
                None
            }
            OracleSpec::BrSnis {
                particles,
                burn_in,
                sweeps,
                proposal_scale,
            } => {
                quadratic_center(problem)?;
                GaussianShiftTarget::new(Vector::zeros(d), *proposal_scale)
                    .map_err(|e| Error::Config(e.to_string()))?;
                if *particles < 2 || burn_in >= sweeps {
                    return Err(Error::Config(
                        "br_snis needs particles >= 2 and burn_in < sweeps".into(),
                    ));
                }
                None
            }
            OracleSpec::Markov {
                mixing,
                samples_per_step,
                start,
            } => {
                if *samples_per_step == 0 {
                    return Err(Error::Config("samples_per_step must be >= 1".into()));
                }
                Some(
                    MarkovStream::new(*mixing, Vector::from_element(d, *start))
                        .map_err(|e| Error::Config(e.to_string()))?,
                )
            }
            OracleSpec::Cso { inner_samples } => {
                if !matches!(problem, Problem::Cso(_)) {
                    return Err(Error::Config("cso oracle needs a cso problem".into()));
                }
                if *inner_samples == 0 {
                    return Err(Error::Config("inner_samples must be >= 1".into()));
                }
                None
            }
        };
        Ok(Oracle { spec, bias, chain })
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }

    /// Draw `H_theta(X_{n})` at iteration index `n >= 1`.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        problem: &Problem,
        theta: &Vector,
        n: u64,
        rng: &mut R,
    ) -> Result<GradientSample> {
        match &self.spec {
            OracleSpec::Synthetic {
                noise_var,
                direction,
            } => synthetic_biased_oracle(
                problem,
                theta,
                n,
                self.bias.as_ref(),
                direction,
                *noise_var,
                rng,
            ),
            OracleSpec::ZerothOrder { tau } => {
                let mut s = zeroth_order_oracle(|t| problem.value(t), theta, *tau, rng)?;
                s.true_gradient = Some(problem.gradient(theta));
                Ok(s)
            }
            OracleSpec::Snis {
                samples,
                proposal_scale,
            } => {
                let (hess, center) = quadratic_center(problem)?;
                let target = GaussianShiftTarget::new(center, *proposal_scale)?;
                let s = snis_estimate(&target, *samples, rng)?;
                Ok(center_to_gradient(problem, theta, hess, s))
            }
            OracleSpec::BrSnis {
                particles,
                burn_in,
                sweeps,
                proposal_scale,
            } => {
                let (hess, center) = quadratic_center(problem)?;
                let target = GaussianShiftTarget::new(center, *proposal_scale)?;
                let s = br_snis_estimate(&target, *particles, *burn_in, *sweeps, rng)?;
                Ok(center_to_gradient(problem, theta, hess, s))
            }
            OracleSpec::Markov {
                samples_per_step, ..
            } => {
                let chain = self.chain.as_mut().expect("markov chain initialized");
                let bias = ar1_conditional_bias(chain.mixing(), chain.state(), *samples_per_step);
                let grad = problem.gradient(theta);
                let g = grad.clone();
                let mut s =
                    markov_oracle(chain, move |_, x| &g - x, theta, *samples_per_step, rng)?;
                s.true_gradient = Some(grad);
                s.bias_target = Some(bias);
                Ok(s)
            }
            OracleSpec::Cso { inner_samples } => match problem {
                Problem::Cso(c) => cso_oracle(c, theta, *inner_samples, rng),
                _ => Err(Error::Config("cso oracle needs a cso problem".into())),
            },
        }
    }
}

fn quadratic_center(problem: &Problem) -> Result<(&crate::Matrix, Vector)> {
    match problem {
        Problem::Quadratic(q) => Ok((q.hessian(), q.center().clone())),
        _ => Err(Error::Config(
            "importance-sampling oracles need a quadratic problem".into(),
        )),
    }
}

/// `grad V = S (theta - c)` with the center replaced by its estimate.
fn center_to_gradient(
    problem: &Problem,
    theta: &Vector,
    hess: &crate::Matrix,
    s: GradientSample,
) -> GradientSample {
    GradientSample {
        estimate: hess * (theta - &s.estimate),
        true_gradient: Some(problem.gradient(theta)),
        bias_target: None,
        inner_samples: s.inner_samples,
    }
}
