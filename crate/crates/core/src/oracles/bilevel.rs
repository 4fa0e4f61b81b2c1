use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GradientSample;
use crate::problems::BilevelProblem;
use crate::{Error, Matrix, Result, Vector};

/// Range of the random truncation level `N'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeumannRange {
    /// `N'` uniform on `{1, ..., N}`.
    #[default]
    OneToN,
    /// `N'` uniform on `{0, ..., N - 1}`; the empty product is the identity.
    ZeroToNMinusOne,
}

impl NeumannRange {
    fn bounds(self, n: u32) -> (u32, u32) {
        match self {
            NeumannRange::OneToN => (1, n),
            NeumannRange::ZeroToNMinusOne => (0, n - 1),
        }
    }
}

/// How the inverse lower-level Hessian is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InverseEstimator {
    /// Randomized truncated Neumann series with horizon `n`.
    Neumann {
        n: u32,
        #[serde(default)]
        range: NeumannRange,
    },
    /// Exact inverse of the mean Hessian (reference path).
    Exact,
}

fn check_scale(bl: &BilevelProblem) -> Result<f64> {
    let ell = bl.neumann_scale;
    if !(ell.is_finite() && ell > 0.0) {
        return Err(Error::Config(format!(
            "Neumann scale must be positive, got {ell}"
        )));
    }
    Ok(ell)
}

/// `G = (N / ell) prod_{i=1}^{N'} (I - H_i / ell)` with independent Hessian samples `H_i`.
pub fn neumann_sample<R: Rng + ?Sized>(
    bl: &BilevelProblem,
    n: u32,
    range: NeumannRange,
    rng: &mut R,
) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Domain("Neumann horizon must be at least 1".into()));
    }
    let ell = check_scale(bl)?;
    let q = bl.phi_dim();
    let (lo, hi) = range.bounds(n);
    let depth = rng.random_range(lo..=hi);
    let eye = Matrix::identity(q, q);
    let mut prod = eye.clone();
    for _ in 0..depth {
        let h = bl.sample_lower_hessian(rng);
        prod = &prod * (&eye - h / ell);
    }
    Ok(prod * (n as f64 / ell))
}

/// `E[G] = (1 / ell) sum_{j} Q^j` over the support of `N'`, `Q = I - H / ell`.
pub fn neumann_expectation(bl: &BilevelProblem, n: u32, range: NeumannRange) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::Domain("Neumann horizon must be at least 1".into()));
    }
    let ell = check_scale(bl)?;
    let q = bl.phi_dim();
    let eye = Matrix::identity(q, q);
    let step = &eye - bl.lower_hessian() / ell;
    let (lo, hi) = range.bounds(n);
    let mut pow = eye.clone();
    let mut sum = Matrix::zeros(q, q);
    for j in 0..=hi {
        if j >= lo {
            sum += &pow;
        }
        pow = &pow * &step;
    }
    Ok(sum / ell)
}

/// Scalar closed form of `E[G]` for `N'` on `{1..N}`: `(1/a)(1 - a/ell)(1 - (1 - a/ell)^N)`.
pub fn neumann_scalar_mean(a: f64, ell: f64, n: u32) -> f64 {
    let q = 1.0 - a / ell;
    q * (1.0 - q.powi(n as i32)) / a
}

/// Hypergradient estimate `grad_theta f - hess_{theta phi} g G grad_phi f` at `(theta, phi)`.
pub fn bilevel_oracle<R: Rng + ?Sized>(
    bl: &BilevelProblem,
    theta: &Vector,
    phi: &Vector,
    inverse: InverseEstimator,
    rng: &mut R,
) -> Result<GradientSample> {
    let (gt, gp) = bl.sample_grad_f(theta, phi, rng);
    let cross = bl.cross_hessian();
    let (correction, mean_inverse, draws) = match inverse {
        InverseEstimator::Neumann { n, range } => {
            let g = neumann_sample(bl, n, range, rng)?;
            (
                &cross * (g * &gp),
                neumann_expectation(bl, n, range)?,
                n as usize,
            )
        }
        InverseEstimator::Exact => {
            let inv = bl
                .lower_hessian()
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Domain("singular lower-level Hessian".into()))?;
            (&cross * (&inv * &gp), inv, 1)
        }
    };
    let estimate = gt - correction;
    let truth = bl.hypergradient(theta);
    let mean = bl.grad_theta_f(theta, phi) - &cross * (mean_inverse * bl.grad_phi_f(theta, phi));
    Ok(GradientSample {
        estimate,
        bias_target: Some(mean - &truth),
        true_gradient: Some(truth),
        inner_samples: draws,
    })
}

/// `T` plain SGD steps of size `step` on the lower level, from `phi0`. `T = 0` returns `phi0`.
pub fn inner_sgd<R: Rng + ?Sized>(
    bl: &BilevelProblem,
    theta: &Vector,
    phi0: &Vector,
    t: usize,
    step: f64,
    rng: &mut R,
) -> Result<Vector> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Domain(format!(
            "inner step must be positive, got {step}"
        )));
    }
    let mut phi = phi0.clone();
    for _ in 0..t {
        let g = bl.sample_grad_phi_g(theta, &phi, rng);
        phi -= g * step;
    }
    Ok(phi)
}
