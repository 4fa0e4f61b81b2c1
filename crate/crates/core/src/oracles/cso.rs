use rand::Rng;

use super::GradientSample;
use crate::problems::{CsoOuter, CsoProblem, Objective};
use crate::{Error, Result, Vector};

/// One `xi`, `m` conditional draws: `(mean_j grad g_j)^T grad f_xi(mean_j g_j)`.
pub fn cso_oracle<R: Rng + ?Sized>(
    cso: &CsoProblem,
    theta: &Vector,
    m: usize,
    rng: &mut R,
) -> Result<GradientSample> {
    if m == 0 {
        return Err(Error::Domain("m must be at least 1".into()));
    }
    let xi = cso.sample_xi(rng);
    let d = cso.dim();
    let mut g_bar = Vector::zeros(d);
    let mut j_bar = crate::Matrix::zeros(d, d);
    for _ in 0..m {
        g_bar += cso.sample_inner(theta, xi, rng);
        j_bar += cso.inner_jacobian();
    }
    g_bar /= m as f64;
    j_bar /= m as f64;
    let estimate = j_bar.transpose() * cso.outer().gradient(&g_bar);
    let bias_target = match cso.outer() {
        // Estimator linear in the inner mean: the conditional expectation is exact.
        CsoOuter::Quadratic | CsoOuter::Linear { .. } => Some(Vector::zeros(d)),
        CsoOuter::LogCosh => None,
    };
    Ok(GradientSample {
        estimate,
        true_gradient: Some(cso.gradient(theta)),
        bias_target,
        inner_samples: m,
    })
}

/// Bias bound `l_{g,0}^2 l_{f,1}^2 sigma_g^2 / m` on the squared bias.
pub fn cso_bias_sq_bound(cso: &CsoProblem, m: usize) -> f64 {
    cso.ell_g0.powi(2) * cso.ell_f1.powi(2) * cso.sigma_g2 / m as f64
}
