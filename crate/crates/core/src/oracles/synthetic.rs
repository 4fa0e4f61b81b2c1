use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::GradientSample;
use crate::problems::Objective;
use crate::rng::seeded;
use crate::schedules::PowerSchedule;
use crate::{Error, Result, Vector};

/// Direction `u` of the injected bias `b_n u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasDirection {
    /// Unit vector along one coordinate axis.
    FixedAxis {
        #[serde(default)]
        axis: usize,
    },
    /// A unit vector drawn once from a seeded isotropic Gaussian.
    FixedRandomUnit { seed: u64 },
    /// `grad V / |grad V|` (zero when the gradient vanishes).
    TowardGradient,
}

impl Default for BiasDirection {
    fn default() -> Self {
        BiasDirection::FixedAxis { axis: 0 }
    }
}

impl BiasDirection {
    pub fn unit(&self, grad: &Vector) -> Result<Vector> {
        let d = grad.len();
        match *self {
            BiasDirection::FixedAxis { axis } => {
                if axis >= d {
                    return Err(Error::Domain(format!(
                        "bias axis {axis} out of range for d = {d}"
                    )));
                }
                let mut u = Vector::zeros(d);
                u[axis] = 1.0;
                Ok(u)
            }
            BiasDirection::FixedRandomUnit { seed } => {
                let mut rng = seeded(seed);
                let v = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                Ok(&v / v.norm())
            }
            BiasDirection::TowardGradient => {
                let n = grad.norm();
                Ok(if n > 0.0 { grad / n } else { Vector::zeros(d) })
            }
        }
    }
}

/// `grad V(theta) + eps + b_n u` with `eps ~ N(0, noise_var I)` and `b_n = bias(n)`.
/// `bias = None` is the unbiased oracle.
pub fn synthetic_biased_oracle<O: Objective + ?Sized, R: Rng + ?Sized>(
    problem: &O,
    theta: &Vector,
    n: u64,
    bias: Option<&PowerSchedule>,
    direction: &BiasDirection,
    noise_var: f64,
    rng: &mut R,
) -> Result<GradientSample> {
    if !(noise_var.is_finite() && noise_var >= 0.0) {
        return Err(Error::Domain(format!(
            "noise variance must be >= 0, got {noise_var}"
        )));
    }
    let grad = problem.gradient(theta);
    let sd = noise_var.sqrt();
    let mut est = grad.clone();
    if sd > 0.0 {
        for x in est.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += sd * z;
        }
    }
    let bias_vec = match bias {
        Some(s) => direction.unit(&grad)? * s.value(n)?,
        None => Vector::zeros(grad.len()),
    };
    est += &bias_vec;
    Ok(GradientSample {
        estimate: est,
        true_gradient: Some(grad),
        bias_target: Some(bias_vec),
        inner_samples: 1,
    })
}
