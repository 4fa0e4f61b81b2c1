use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{sym_extremes, Objective, DEFAULT_PROBE_RADIUS};
use crate::rng::seeded;
use crate::{Error, Matrix, Result, Vector};

const GD_TOL: f64 = 1e-10;
const GD_MAX_ITERS: usize = 5_000_000;

/// Ridge-regularized logistic loss `(1/n) sum log(1 + exp(-y_i x_i^T theta)) + (ridge/2)|theta|^2`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    x: Matrix,
    y: Vector,
    ridge: f64,
    l: f64,
    mean_row_norm: f64,
    radius: f64,
    minimizer: Option<Vector>,
    vstar: Option<f64>,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticProblem {
    pub fn new(features: Matrix, labels: Vector, ridge: f64) -> Result<Self> {
        let (n, d) = features.shape();
        if n == 0 || d == 0 {
            return Err(Error::Domain("empty data".into()));
        }
        if labels.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: labels.len(),
            });
        }
        if labels.iter().any(|y| *y != 1.0 && *y != -1.0) {
            return Err(Error::Domain("labels must be +1 or -1".into()));
        }
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::Domain(format!("ridge must be >= 0, got {ridge}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        let xtx = features.transpose() * &features;
        let (_, hi) = sym_extremes(&xtx);
        let mean_row_norm = features.row_iter().map(|r| r.norm()).sum::<f64>() / n as f64;
        let mut p = LogisticProblem {
            x: features,
            y: labels,
            ridge,
            l: hi / (4.0 * n as f64) + ridge,
            mean_row_norm,
            radius: DEFAULT_PROBE_RADIUS,
            minimizer: None,
            vstar: None,
        };
        if ridge > 0.0 {
            let t = p.reference_minimizer()?;
            p.vstar = Some(p.value(&t));
            p.minimizer = Some(t);
        }
        Ok(p)
    }

    /// Seeded instance with Gaussian features and labels from a noisy linear teacher.
    pub fn synthetic(rows: usize, d: usize, ridge: f64, seed: u64) -> Result<Self> {
        let mut rng = seeded(seed);
        let x = Matrix::from_fn(rows, d, |_, _| StandardNormal.sample(&mut rng));
        let w = Vector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let y = Vector::from_fn(rows, |i, _| {
            let z: f64 = x.row(i).transpose().dot(&w);
            let u: f64 = rng.random();
            if u < sigmoid(2.0 * z) {
                1.0
            } else {
                -1.0
            }
        });
        Self::new(x, y, ridge)
    }

    /// Deterministic gradient descent with step `1/L` until `|grad V| < 1e-10`.
    fn reference_minimizer(&self) -> Result<Vector> {
        let mut t = Vector::zeros(self.dim());
        let step = 1.0 / self.l;
        for _ in 0..GD_MAX_ITERS {
            let g = self.gradient(&t);
            if g.norm() < GD_TOL {
                return Ok(t);
            }
            t -= g * step;
        }
        Err(Error::Domain(
            "reference gradient descent did not converge".into(),
        ))
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn with_radius(mut self, r: f64) -> Self {
        self.radius = r;
        self
    }
}

impl Objective for LogisticProblem {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, theta: &Vector) -> f64 {
        let z = &self.x * theta;
        let n = self.y.len() as f64;
        let loss: f64 = z
            .iter()
            .zip(self.y.iter())
            .map(|(z, y)| softplus(-y * z))
            .sum();
        loss / n + 0.5 * self.ridge * theta.norm_squared()
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        let z = &self.x * theta;
        let n = self.y.len() as f64;
        let coef = Vector::from_fn(self.y.len(), |i, _| {
            -self.y[i] * sigmoid(-self.y[i] * z[i]) / n
        });
        self.x.transpose() * coef + theta * self.ridge
    }

    fn optimum_value(&self) -> Option<f64> {
        self.vstar
    }

    fn minimizer(&self) -> Option<Vector> {
        self.minimizer.clone()
    }

    fn smoothness(&self) -> f64 {
        self.l
    }

    fn pl_constant(&self) -> Option<f64> {
        (self.ridge > 0.0).then_some(self.ridge)
    }

    fn grad_bound(&self) -> Option<f64> {
        Some(self.mean_row_norm + self.ridge * self.radius)
    }

    fn probe_radius(&self) -> f64 {
        self.radius
    }
}
