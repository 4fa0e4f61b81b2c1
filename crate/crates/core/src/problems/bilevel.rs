use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{spectral_norm, sym_extremes, Objective, DEFAULT_PROBE_RADIUS};
use crate::rng::seeded;
use crate::{Error, Matrix, Result, Vector};

/// Standard deviations of the Gaussian perturbations applied by the stochastic oracles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilevelNoise {
    /// Per-coordinate noise on both components of `grad f`.
    #[serde(default)]
    pub f_grad: f64,
    /// Per-coordinate noise on `grad_phi g`.
    #[serde(default)]
    pub g_grad: f64,
    /// Entrywise noise on the symmetric samples of `hess_phi g`.
    #[serde(default)]
    pub hessian: f64,
}

/// Quadratic bilevel problem.
///
/// Lower level `g(theta, phi) = phi^T H phi / 2 - phi^T B theta`, so `phi*(theta) = H^{-1} B theta`.
/// Upper level `f(theta, phi) = theta^T F_t theta / 2 + (phi - c)^T F_p (phi - c) / 2`.
#[derive(Debug, Clone)]
pub struct BilevelProblem {
    h: Matrix,
    h_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    b: Matrix,
    f_theta: Matrix,
    f_phi: Matrix,
    c: Vector,
    noise: BilevelNoise,
    pub mu_g: f64,
    pub ell_g1: f64,
    pub ell_g2: f64,
    pub ell_f0: f64,
    pub ell_f1: f64,
    /// Scale used by the Neumann inverse estimator; defaults to `ell_g1`.
    pub neumann_scale: f64,
    radius: f64,
    reduced: ReducedBilevel,
}

impl BilevelProblem {
    pub fn new(h: Matrix, b: Matrix, f_theta: Matrix, f_phi: Matrix, c: Vector) -> Result<Self> {
        let q = h.nrows();
        let p = b.ncols();
        if h.ncols() != q || b.nrows() != q || f_phi.shape() != (q, q) || c.len() != q {
            return Err(Error::Dimension {
                expected: q,
                got: b.nrows(),
            });
        }
        if f_theta.shape() != (p, p) {
            return Err(Error::Dimension {
                expected: p,
                got: f_theta.nrows(),
            });
        }
        let h_chol = nalgebra::Cholesky::new(h.clone())
            .ok_or_else(|| Error::Domain("lower-level Hessian must be positive definite".into()))?;
        let (mu_g, _) = sym_extremes(&h);
        let mut joint = Matrix::zeros(p + q, p + q);
        joint.view_mut((p, p), (q, q)).copy_from(&h);
        joint.view_mut((p, 0), (q, p)).copy_from(&(-&b));
        joint.view_mut((0, p), (p, q)).copy_from(&(-b.transpose()));
        let ell_g1 = spectral_norm(&joint);
        let (_, ft_hi) = sym_extremes(&f_theta);
        let (_, fp_hi) = sym_extremes(&f_phi);
        let ell_f1 = ft_hi.max(fp_hi);
        let radius = DEFAULT_PROBE_RADIUS;

        let m = h_chol.solve(&b);
        let k = &f_theta + m.transpose() * &f_phi * &m;
        let lin = m.transpose() * &f_phi * &c;
        let k_chol = nalgebra::Cholesky::new(k.clone())
            .ok_or_else(|| Error::Domain("reduced Hessian must be positive definite".into()))?;
        let theta_star = k_chol.solve(&lin);
        let (k_lo, k_hi) = sym_extremes(&k);
        let mut reduced = ReducedBilevel {
            k,
            m,
            f_theta: f_theta.clone(),
            f_phi: f_phi.clone(),
            c: c.clone(),
            theta_star: theta_star.clone(),
            vstar: 0.0,
            l: k_hi,
            mu: k_lo,
            radius,
        };
        reduced.vstar = reduced.value(&theta_star);

        Ok(BilevelProblem {
            h,
            h_chol,
            b,
            f_theta,
            f_phi,
            ell_f0: ell_f1 * (radius + c.norm()),
            c,
            noise: BilevelNoise::default(),
            mu_g,
            ell_g1,
            ell_g2: 0.0,
            ell_f1,
            neumann_scale: ell_g1,
            radius,
            reduced,
        })
    }

    /// Seeded random instance: `theta` in R^3, `phi` in R^4.
    pub fn quadratic_toy(seed: u64) -> Result<Self> {
        let (p, q) = (3, 4);
        let mut rng = seeded(seed);
        let h = random_spd(q, 1.0, 4.0, &mut rng);
        let b = Matrix::from_fn(q, p, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.5 * z
        });
        let ft = random_spd(p, 0.5, 2.0, &mut rng);
        let fp = random_spd(q, 0.5, 2.0, &mut rng);
        let c = Vector::from_fn(q, |_, _| StandardNormal.sample(&mut rng));
        Self::new(h, b, ft, fp, c)
    }

    /// Lower level `|phi|^2 / 2 - phi^T B theta`, i.e. `phi*(theta) = B theta` and `mu_g = 1`.
    pub fn chain_rule_toy(seed: u64) -> Result<Self> {
        let (p, q) = (3, 4);
        let mut rng = seeded(seed);
        let b = Matrix::from_fn(q, p, |_, _| StandardNormal.sample(&mut rng));
        let ft = random_spd(p, 0.5, 2.0, &mut rng);
        let fp = random_spd(q, 0.5, 2.0, &mut rng);
        let c = Vector::from_fn(q, |_, _| StandardNormal.sample(&mut rng));
        Self::new(Matrix::identity(q, q), b, ft, fp, c)
    }

    /// One-dimensional instance with lower level `g = a phi^2 / 2 - phi theta` and Neumann scale `ell`.
    pub fn scalar_toy(a: f64, ell: f64) -> Result<Self> {
        let one = Matrix::from_element(1, 1, 1.0);
        let mut p = Self::new(
            Matrix::from_element(1, 1, a),
            one.clone(),
            one.clone(),
            one,
            Vector::from_element(1, 1.0),
        )?;
        p.set_neumann_scale(ell)?;
        Ok(p)
    }

    pub fn with_noise(mut self, noise: BilevelNoise) -> Self {
        self.noise = noise;
        self
    }

    pub fn set_neumann_scale(&mut self, ell: f64) -> Result<()> {
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::Config(format!(
                "Neumann scale must be positive, got {ell}"
            )));
        }
        self.neumann_scale = ell;
        Ok(())
    }

    pub fn noise(&self) -> BilevelNoise {
        self.noise
    }

    pub fn theta_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn phi_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn lower_hessian(&self) -> &Matrix {
        &self.h
    }

    /// `phi*(theta) = H^{-1} B theta`.
    pub fn lower_opt(&self, theta: &Vector) -> Vector {
        self.h_chol.solve(&(&self.b * theta))
    }

    pub fn upper_value(&self, theta: &Vector, phi: &Vector) -> f64 {
        let r = phi - &self.c;
        0.5 * theta.dot(&(&self.f_theta * theta)) + 0.5 * r.dot(&(&self.f_phi * &r))
    }

    pub fn grad_theta_f(&self, theta: &Vector, _phi: &Vector) -> Vector {
        &self.f_theta * theta
    }

    pub fn grad_phi_f(&self, _theta: &Vector, phi: &Vector) -> Vector {
        &self.f_phi * (phi - &self.c)
    }

    pub fn grad_phi_g(&self, theta: &Vector, phi: &Vector) -> Vector {
        &self.h * phi - &self.b * theta
    }

    /// Mixed second derivative `d/dtheta grad_phi g`, a `dim(theta) x dim(phi)` matrix.
    pub fn cross_hessian(&self) -> Matrix {
        -self.b.transpose()
    }

    /// `v* = [hess_phi g]^{-1} grad_phi f` at `(theta, phi)`.
    pub fn v_star(&self, theta: &Vector, phi: &Vector) -> Vector {
        self.h_chol.solve(&self.grad_phi_f(theta, phi))
    }

    /// `grad_theta f - hess_{theta phi} g [hess_phi g]^{-1} grad_phi f` at `(theta, phi*(theta))`.
    pub fn hypergradient(&self, theta: &Vector) -> Vector {
        let phi = self.lower_opt(theta);
        self.grad_theta_f(theta, &phi) - self.cross_hessian() * self.v_star(theta, &phi)
    }

    pub fn sample_grad_phi_g<R: Rng + ?Sized>(
        &self,
        theta: &Vector,
        phi: &Vector,
        rng: &mut R,
    ) -> Vector {
        let mut g = self.grad_phi_g(theta, phi);
        add_noise(&mut g, self.noise.g_grad, rng);
        g
    }

    pub fn sample_grad_f<R: Rng + ?Sized>(
        &self,
        theta: &Vector,
        phi: &Vector,
        rng: &mut R,
    ) -> (Vector, Vector) {
        let mut gt = self.grad_theta_f(theta, phi);
        let mut gp = self.grad_phi_f(theta, phi);
        add_noise(&mut gt, self.noise.f_grad, rng);
        add_noise(&mut gp, self.noise.f_grad, rng);
        (gt, gp)
    }

    pub fn sample_lower_hessian<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        if self.noise.hessian == 0.0 {
            return self.h.clone();
        }
        let q = self.phi_dim();
        let z = Matrix::from_fn(q, q, |_, _| StandardNormal.sample(rng));
        &self.h + (&z + z.transpose()) * (0.5 * self.noise.hessian)
    }

    /// Smoothness constant of the reduced objective from the stored constants.
    pub fn lemma_lv(&self) -> f64 {
        let (lf0, lf1, lg1, lg2, mu) = (
            self.ell_f0,
            self.ell_f1,
            self.ell_g1,
            self.ell_g2,
            self.mu_g,
        );
        let tail = (lf0 / mu) * (lg2 + lg1 * lg2 / mu);
        let lf = lf1 + lg1 * lf1 / mu + tail;
        lf1 + lg1 * (lf1 + lf) / mu + tail
    }

    /// Bias bound of the truncated Neumann estimator at `phi = phi*(theta)`.
    pub fn neumann_bias_bound(&self, n: u32) -> f64 {
        let ell = self.neumann_scale;
        ell * self.ell_f1 / self.mu_g * (1.0 - self.mu_g / ell).powi(n as i32)
    }

    /// The reduced objective `theta -> f(theta, phi*(theta))`.
    pub fn reduced(&self) -> ReducedBilevel {
        self.reduced.clone()
    }

    pub fn probe_radius(&self) -> f64 {
        self.radius
    }
}

/// `V(theta) = f(theta, phi*(theta))`, a strongly convex quadratic with Hessian `K`.
#[derive(Debug, Clone)]
pub struct ReducedBilevel {
    k: Matrix,
    m: Matrix,
    f_theta: Matrix,
    f_phi: Matrix,
    c: Vector,
    theta_star: Vector,
    vstar: f64,
    l: f64,
    mu: f64,
    radius: f64,
}

impl ReducedBilevel {
    pub fn hessian(&self) -> &Matrix {
        &self.k
    }
}

impl Objective for ReducedBilevel {
    fn dim(&self) -> usize {
        self.k.nrows()
    }

    fn value(&self, theta: &Vector) -> f64 {
        let r = &self.m * theta - &self.c;
        0.5 * theta.dot(&(&self.f_theta * theta)) + 0.5 * r.dot(&(&self.f_phi * &r))
    }

    fn gradient(&self, theta: &Vector) -> Vector {
        &self.f_theta * theta + self.m.transpose() * (&self.f_phi * (&self.m * theta - &self.c))
    }

    fn optimum_value(&self) -> Option<f64> {
        Some(self.vstar)
    }

    fn minimizer(&self) -> Option<Vector> {
        Some(self.theta_star.clone())
    }

    fn smoothness(&self) -> f64 {
        self.l
    }

    fn pl_constant(&self) -> Option<f64> {
        Some(self.mu)
    }

    fn grad_bound(&self) -> Option<f64> {
        Some(self.l * (self.radius + self.theta_star.norm()))
    }

    fn probe_radius(&self) -> f64 {
        self.radius
    }
}

fn random_spd<R: Rng + ?Sized>(d: usize, lo: f64, hi: f64, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let ev = Vector::from_fn(d, |_, _| lo + (hi - lo) * rng.random::<f64>());
    let m = &q * Matrix::from_diagonal(&ev) * q.transpose();
    (&m + m.transpose()) * 0.5
}

fn add_noise<R: Rng + ?Sized>(v: &mut Vector, sd: f64, rng: &mut R) {
    if sd > 0.0 {
        for x in v.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x += sd * z;
        }
    }
}
