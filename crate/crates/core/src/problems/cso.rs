use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Objective, DEFAULT_PROBE_RADIUS};
use crate::rng::seeded;
use crate::{Error, Result, Vector};

/// Outer function `f_xi(y)` of a conditional stochastic objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CsoOuter {
    /// `|y|^2 / 2`.
    Quadratic,
    /// `c^T y`.
    Linear { c: Vec<f64> },
    /// `sum_j log cosh(y_j)`.
    LogCosh,
}

fn log_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl CsoOuter {
    pub fn value(&self, y: &Vector) -> f64 {
        match self {
            CsoOuter::Quadratic => 0.5 * y.norm_squared(),
            CsoOuter::Linear { c } => c.iter().zip(y.iter()).map(|(a, b)| a * b).sum(),
            CsoOuter::LogCosh => y.iter().map(|v| log_cosh(*v)).sum(),
        }
    }

    pub fn gradient(&self, y: &Vector) -> Vector {
        match self {
            CsoOuter::Quadratic => y.clone(),
            CsoOuter::Linear { c } => Vector::from_column_slice(c),
            CsoOuter::LogCosh => y.map(f64::tanh),
        }
    }

    /// Lipschitz constant of `grad f`.
    pub fn smoothness(&self) -> f64 {
        match self {
            CsoOuter::Quadratic | CsoOuter::LogCosh => 1.0,
            CsoOuter::Linear { .. } => 0.0,
        }
    }
}

/// `V(theta) = E_xi f(E_{eta|xi} g_eta(theta, xi))` with `g_eta(theta, xi) = theta + m(xi) + eta`,
/// `xi` uniform over a finite set of shifts and `eta ~ N(0, sigma^2 I)` given `xi`.
#[derive(Debug, Clone)]
pub struct CsoProblem {
    shifts: Vec<Vector>,
    sigma: f64,
    outer: CsoOuter,
    radius: f64,
    pub ell_f0: f64,
    pub ell_f1: f64,
    pub ell_g0: f64,
    pub ell_g1: f64,
    /// Conditional variance bound `E|g - E g|^2 = d sigma^2`.
    pub sigma_g2: f64,
}

impl CsoProblem {
    pub fn new(shifts: Vec<Vector>, sigma: f64, outer: CsoOuter) -> Result<Self> {
        let d = shifts
            .first()
            .map(|s| s.len())
            .ok_or_else(|| Error::Domain("at least one shift required".into()))?;
        if d == 0 || shifts.iter().any(|s| s.len() != d) {
            return Err(Error::Domain(
                "shifts must share a positive dimension".into(),
            ));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Domain(format!("sigma must be >= 0, got {sigma}")));
        }
        if let CsoOuter::Linear { c } = &outer {
            if c.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: c.len(),
                });
            }
        }
        let radius = DEFAULT_PROBE_RADIUS;
        let max_shift = shifts.iter().map(|s| s.norm()).fold(0.0f64, f64::max);
        let ell_f0 = match &outer {
            CsoOuter::Quadratic => radius + max_shift,
            CsoOuter::Linear { c } => c.iter().map(|x| x * x).sum::<f64>().sqrt(),
            CsoOuter::LogCosh => (d as f64).sqrt(),
        };
        Ok(CsoProblem {
            ell_f1: outer.smoothness(),
            shifts,
            sigma,
            outer,
            radius,
            ell_f0,
            ell_g0: 1.0,
            ell_g1: 0.0,
            sigma_g2: d as f64 * sigma * sigma,
        })
    }

    /// Quadratic outer function, four seeded shifts in R^3, conditional noise `sigma_g`.
    pub fn quadratic_toy(sigma_g: f64, seed: u64) -> Result<Self> {
        Self::toy(sigma_g, seed, CsoOuter::Quadratic)
    }

    pub fn toy(sigma_g: f64, seed: u64, outer: CsoOuter) -> Result<Self> {
        let mut rng = seeded(seed);
        let shifts = (0..4)
            .map(|_| Vector::from_fn(3, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        Self::new(shifts, sigma_g, outer)
    }

    pub fn outer(&self) -> &CsoOuter {
        &self.outer
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn shifts(&self) -> &[Vector] {
        &self.shifts
    }

    pub fn sample_xi<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.shifts.len())
    }

    /// One draw of `g_eta(theta, xi)`.
    pub fn sample_inner<R: Rng + ?Sized>(&self, theta: &Vector, xi: usize, rng: &mut R) -> Vector {
        let mut y = theta + &self.shifts[xi];
        if self.sigma > 0.0 {
            for v in y.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += self.sigma * z;
            }
        }
        y
    }

    /// Jacobian of `g` in `theta`; the identity for this family.
    pub fn inner_jacobian(&self) -> crate::Matrix {
        crate::Matrix::identity(self.dim(), self.dim())
    }

    fn mean_shift(&self) -> Vector {
        let mut m = Vector::zeros(self.dim());
        for s in &self.shifts {
            m += s;
        }
        m / self.shifts.len() as f64
    }
}

impl Objective for CsoProblem {
    fn dim(&self) -> usize {
        self.shifts[0].len()
    }

    fn value(&self, theta: &Vector) -> f64 {
        let k = self.shifts.len() as f64;
        self.shifts
            .iter()
            .map(|s| self.outer.value(&(theta + s)))
            .sum::<f64>()
            / k
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        let mut g = Vector::zeros(self.dim());
        for s in &self.shifts {
            g += self.outer.gradient(&(theta + s));
        }
        g / self.shifts.len() as f64
    }

    fn optimum_value(&self) -> Option<f64> {
        match self.outer {
            CsoOuter::Quadratic => Some(self.value(&-self.mean_shift())),
            _ => None,
        }
    }

    fn minimizer(&self) -> Option<Vector> {
        match self.outer {
            CsoOuter::Quadratic => Some(-self.mean_shift()),
            _ => None,
        }
    }

    fn smoothness(&self) -> f64 {
        self.ell_f1 * self.ell_g0 * self.ell_g0
    }

    fn pl_constant(&self) -> Option<f64> {
        match self.outer {
            CsoOuter::Quadratic => Some(1.0),
            _ => None,
        }
    }

    fn grad_bound(&self) -> Option<f64> {
        Some(self.ell_g0 * self.ell_f0)
    }

    fn probe_radius(&self) -> f64 {
        self.radius
    }
}
