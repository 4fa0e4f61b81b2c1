use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::GradientSample;
use crate::{Error, Result, Vector};

/// Vector AR(1) chain `x' = a x + sqrt(1 - a^2) xi`, stationary law `N(0, I)`.
#[derive(Debug, Clone)]
pub struct MarkovStream {
    a: f64,
    state: Vector,
}

impl MarkovStream {
    pub fn new(a: f64, initial: Vector) -> Result<Self> {
        if !(a.is_finite() && (0.0..1.0).contains(&a.abs())) {
            return Err(Error::Domain(format!(
                "mixing parameter must satisfy |a| < 1, got {a}"
            )));
        }
        if initial.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("chain state"));
        }
        Ok(MarkovStream { a, state: initial })
    }

    pub fn mixing(&self) -> f64 {
        self.a
    }

    pub fn state(&self) -> &Vector {
        &self.state
    }

    /// Stationary mean and per-coordinate variance.
    pub fn stationary_moments(&self) -> (Vector, f64) {
        (Vector::zeros(self.state.len()), 1.0)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &Vector {
        let s = (1.0 - self.a * self.a).sqrt();
        for x in self.state.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x = self.a * *x + s * z;
        }
        &self.state
    }
}

/// Advance the chain `T` steps and average `grad_fn(theta, x)` over the visited states.
/// The chain is not reset between calls.
pub fn markov_oracle<F, R>(
    chain: &mut MarkovStream,
    grad_fn: F,
    theta: &Vector,
    t: usize,
    rng: &mut R,
) -> Result<GradientSample>
where
    F: Fn(&Vector, &Vector) -> Vector,
    R: Rng + ?Sized,
{
    if t == 0 {
        return Err(Error::Domain("T must be at least 1".into()));
    }
    let mut acc: Option<Vector> = None;
    for _ in 0..t {
        let x = chain.step(rng);
        let g = grad_fn(theta, x);
        acc = Some(match acc {
            Some(a) => a + g,
            None => g,
        });
    }
    Ok(GradientSample {
        estimate: acc.expect("t >= 1") / t as f64,
        true_gradient: None,
        bias_target: None,
        inner_samples: t,
    })
}

/// Conditional mean shift `-(1/T) sum_{i=1..T} a^i x0` of the AR(1) oracle
/// with `grad_fn(theta, x) = h(theta) - x`, started at `x0`.
pub fn ar1_conditional_bias(a: f64, x0: &Vector, t: usize) -> Vector {
    let mut s = 0.0;
    let mut p = 1.0;
    for _ in 0..t {
        p *= a;
        s += p;
    }
    -(x0 * (s / t as f64))
}
