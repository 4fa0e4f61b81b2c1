use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::GradientSample;
use crate::{Error, Result, Vector};

/// Gaussian-smoothing estimate `((V(theta + tau X) - V(theta)) / tau) X` with `X ~ N(0, I)`.
pub fn zeroth_order_oracle<F, R>(
    value_fn: F,
    theta: &Vector,
    tau: f64,
    rng: &mut R,
) -> Result<GradientSample>
where
    F: Fn(&Vector) -> f64,
    R: Rng + ?Sized,
{
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Domain(format!(
            "smoothing must be positive, got {tau}"
        )));
    }
    let x = Vector::from_fn(theta.len(), |_, _| StandardNormal.sample(rng));
    let v0 = value_fn(theta);
    let v1 = value_fn(&(theta + &x * tau));
    if !(v0.is_finite() && v1.is_finite()) {
        return Err(Error::NonFinite("objective value"));
    }
    Ok(GradientSample {
        estimate: x * ((v1 - v0) / tau),
        true_gradient: None,
        bias_target: None,
        inner_samples: 1,
    })
}

/// Bias bound `(tau / 2) L (d + 3)^{3/2}` for an `L`-smooth objective.
pub fn zeroth_order_bias_bound(tau: f64, l: f64, d: usize) -> f64 {
    0.5 * tau * l * ((d + 3) as f64).powf(1.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn unbiased_on_isotropic_quadratic() {
        let theta = Vector::from_column_slice(&[1.0, -0.5, 2.0]);
        let f = |t: &Vector| 0.5 * t.norm_squared();
        let mut rng = seeded(3);
        let reps = 1_000_000;
        let mut sum = Vector::zeros(3);
        let mut sq = Vector::zeros(3);
        for _ in 0..reps {
            let e = zeroth_order_oracle(f, &theta, 0.5, &mut rng)
                .unwrap()
                .estimate;
            sq += e.component_mul(&e);
            sum += e;
        }
        let mean = &sum / reps as f64;
        for j in 0..3 {
            let var = sq[j] / reps as f64 - mean[j] * mean[j];
            let se = (var / reps as f64).sqrt();
            assert!((mean[j] - theta[j]).abs() <= 4.0 * se, "coord {j}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = Vector::zeros(2);
        let mut rng = seeded(0);
        assert!(zeroth_order_oracle(|_| 0.0, &t, 0.0, &mut rng).is_err());
        assert!(zeroth_order_oracle(|_| f64::NAN, &t, 0.1, &mut rng).is_err());
    }

    #[test]
    fn small_tau_recovers_gradient_direction() {
        // Directional finite difference: E[(v . X) X] = v, so averaging over draws
        // converges to the gradient up to O(tau).
        let theta = Vector::from_column_slice(&[0.3, 0.8]);
        let f = |t: &Vector| t[0].sin() + t[1].powi(3);
        let grad = Vector::from_column_slice(&[0.3f64.cos(), 3.0 * 0.64]);
        let mut rng = seeded(4);
        let reps = 400_000;
        let mut mean = Vector::zeros(2);
        for _ in 0..reps {
            mean += zeroth_order_oracle(f, &theta, 1e-3, &mut rng)
                .unwrap()
                .estimate;
        }
        mean /= reps as f64;
        assert!((mean - grad).norm() < 0.02);
    }
}
