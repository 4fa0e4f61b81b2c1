use rand_distr::{Distribution, StandardNormal};

use super::{sym_extremes, Objective, DEFAULT_PROBE_RADIUS};
use crate::rng::seeded;
use crate::{Error, Matrix, Result, Vector};

/// `V(theta) = |A (theta - c)|^2 / 2`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    a: Matrix,
    ata: Matrix,
    center: Vector,
    l: f64,
    mu: f64,
    radius: f64,
}

impl QuadraticProblem {
    pub fn new(a: Matrix) -> Result<Self> {
        let d = a.ncols();
        Self::with_center(a, Vector::zeros(d))
    }

    pub fn with_center(a: Matrix, center: Vector) -> Result<Self> {
        if a.ncols() == 0 || a.nrows() == 0 {
            return Err(Error::Domain("empty matrix".into()));
        }
        if a.iter().all(|x| *x == 0.0) {
            return Err(Error::Domain("A must be nonzero".into()));
        }
        if a.iter().any(|x| !x.is_finite()) || center.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("quadratic coefficients"));
        }
        if center.len() != a.ncols() {
            return Err(Error::Dimension {
                expected: a.ncols(),
                got: center.len(),
            });
        }
        let ata = a.transpose() * &a;
        let (lo, hi) = sym_extremes(&ata);
        Ok(QuadraticProblem {
            a,
            ata,
            center,
            l: hi,
            mu: lo.max(0.0),
            radius: DEFAULT_PROBE_RADIUS,
        })
    }

    /// Random least-squares instance: `A = diag(s) Q^T` with `Q` a seeded random
    /// orthogonal basis and the eigenvalues `s_i^2` of `A^T A` evenly spread over [0.1, 1].
    pub fn least_squares(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        let mut rng = seeded(seed);
        let g = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
        let q = g.qr().q();
        let s = Vector::from_fn(d, |i, _| {
            let t = if d == 1 {
                1.0
            } else {
                i as f64 / (d - 1) as f64
            };
            (0.1 + 0.9 * t).sqrt()
        });
        let a = Matrix::from_diagonal(&s) * q.transpose();
        Self::new(a)
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.radius = r;
        self
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn hessian(&self) -> &Matrix {
        &self.ata
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, theta: &Vector) -> f64 {
        let r = &self.a * (theta - &self.center);
        0.5 * r.norm_squared()
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        &self.ata * (theta - &self.center)
    }

    fn optimum_value(&self) -> Option<f64> {
        Some(0.0)
    }

    fn minimizer(&self) -> Option<Vector> {
        Some(self.center.clone())
    }

    fn smoothness(&self) -> f64 {
        self.l
    }

    fn pl_constant(&self) -> Option<f64> {
        (self.mu > 0.0).then_some(self.mu)
    }

    fn grad_bound(&self) -> Option<f64> {
        Some(self.l * (self.radius + self.center.norm()))
    }

    fn probe_radius(&self) -> f64 {
        self.radius
    }
}
