//! Closed-form test objectives and numerical assumption checks.

mod bilevel;
mod cso;
mod logistic;
mod quadratic;

pub use bilevel::{BilevelNoise, BilevelProblem, ReducedBilevel};
pub use cso::{CsoOuter, CsoProblem};
pub use logistic::LogisticProblem;
pub use quadratic::QuadraticProblem;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::{Error, Result, Vector};

pub const DEFAULT_PROBE_RADIUS: f64 = 10.0;

/// A differentiable objective `V` with the constants the convergence theory needs.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &Vector) -> f64;
    fn gradient(&self, theta: &Vector) -> Vector;
    /// `V(theta*)`, when known.
    fn optimum_value(&self) -> Option<f64>;
    fn minimizer(&self) -> Option<Vector> {
        None
    }
    /// Lipschitz constant `L` of the gradient.
    fn smoothness(&self) -> f64;
    /// PL constant `mu`.
    fn pl_constant(&self) -> Option<f64>;
    /// Bound `M` on `|grad V|` over the probe ball.
    fn grad_bound(&self) -> Option<f64>;
    fn probe_radius(&self) -> f64 {
        DEFAULT_PROBE_RADIUS
    }
}

/// The shipped single-level objectives.
#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(QuadraticProblem),
    Logistic(LogisticProblem),
    Cso(CsoProblem),
}

impl Problem {
    pub fn kind(&self) -> &'static str {
        match self {
            Problem::Quadratic(_) => "quadratic",
            Problem::Logistic(_) => "logistic",
            Problem::Cso(_) => "cso",
        }
    }

    fn inner(&self) -> &dyn Objective {
        match self {
            Problem::Quadratic(q) => q,
            Problem::Logistic(l) => l,
            Problem::Cso(c) => c,
        }
    }
}

impl Objective for Problem {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn value(&self, theta: &Vector) -> f64 {
        self.inner().value(theta)
    }
    fn gradient(&self, theta: &Vector) -> Vector {
        self.inner().gradient(theta)
    }
    fn optimum_value(&self) -> Option<f64> {
        self.inner().optimum_value()
    }
    fn minimizer(&self) -> Option<Vector> {
        self.inner().minimizer()
    }
    fn smoothness(&self) -> f64 {
        self.inner().smoothness()
    }
    fn pl_constant(&self) -> Option<f64> {
        self.inner().pl_constant()
    }
    fn grad_bound(&self) -> Option<f64> {
        self.inner().grad_bound()
    }
    fn probe_radius(&self) -> f64 {
        self.inner().probe_radius()
    }
}

/// Central differences `(V(theta + h e_j) - V(theta - h e_j)) / 2h`.
pub fn finite_difference_gradient<O: Objective + ?Sized>(
    p: &O,
    theta: &Vector,
    h: f64,
) -> Result<Vector> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {h}")));
    }
    let mut out = Vector::zeros(theta.len());
    let mut x = theta.clone();
    for j in 0..theta.len() {
        let t = theta[j];
        x[j] = t + h;
        let up = p.value(&x);
        x[j] = t - h;
        let down = p.value(&x);
        x[j] = t;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite("objective value"));
        }
        out[j] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Uniform draw from the ball of radius `r` in `d` dimensions.
pub fn sample_ball<R: Rng + ?Sized>(d: usize, r: f64, rng: &mut R) -> Vector {
    let mut v = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let n = v.norm();
    if n > 0.0 {
        v /= n;
    }
    let u: f64 = rng.random();
    v * (r * u.powf(1.0 / d as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub probes: usize,
    pub smoothness: f64,
    /// max `|grad V(a) - grad V(b)| / (L |a - b|)`.
    pub lipschitz_ratio: f64,
    pub pl_constant: Option<f64>,
    /// max `2 mu (V - V*) / |grad V|^2 - 1`; positive values are violations.
    pub pl_violation: Option<f64>,
    pub grad_bound: Option<f64>,
    /// max `|grad V| / M` over the probe ball.
    pub grad_ratio: Option<f64>,
    /// `|grad V(theta*)|`, when a minimizer is exposed.
    pub minimizer_grad_norm: Option<f64>,
    pub violations: Vec<String>,
    pub pass: bool,
}

pub const ASSUMPTION_TOL: f64 = 1e-9;

const POWER_STEPS: usize = 100;

/// Probe the smoothness, PL and bounded-gradient assumptions at random points.
///
/// Lipschitz pairs are sampled at random and, for a share of the budget, refined by
/// secant power iteration toward the direction of largest curvature. When the minimizer
/// is known, PL probes are also placed along the flattest direction found by shifted
/// power iteration at the minimizer.
pub fn verify_assumptions<O: Objective + ?Sized, R: Rng + ?Sized>(
    p: &O,
    probes: usize,
    rng: &mut R,
) -> Result<AssumptionReport> {
    if probes < 2 {
        return Err(Error::Domain("at least two probes are required".into()));
    }
    let d = p.dim();
    let radius = p.probe_radius();
    let l = p.smoothness();
    let mu = p.pl_constant();
    let m = p.grad_bound();
    let vstar = p.optimum_value();

    let mut lip = 0.0f64;
    let mut pl_viol: Option<f64> = match (mu, vstar) {
        (Some(_), Some(_)) => Some(f64::NEG_INFINITY),
        _ => None,
    };
    let mut grad_ratio: Option<f64> = m.map(|_| 0.0);

    let mut record_point = |theta: &Vector, g: &Vector| {
        let gn2 = g.norm_squared();
        if let (Some(mu), Some(vs), Some(pv)) = (mu, vstar, pl_viol.as_mut()) {
            let gap = p.value(theta) - vs;
            if gn2 > 0.0 {
                *pv = pv.max(2.0 * mu * gap / gn2 - 1.0);
            } else if gap > 0.0 {
                *pv = f64::INFINITY;
            }
        }
        if let (Some(mb), Some(gr)) = (m, grad_ratio.as_mut()) {
            *gr = gr.max(gn2.sqrt() / mb);
        }
    };

    for i in 0..probes {
        let a = sample_ball(d, radius, rng);
        let ga = p.gradient(&a);
        record_point(&a, &ga);

        let mut dir = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let scale = 1e-2 * radius.max(1.0);
        let refine = if i % 4 == 0 { POWER_STEPS } else { 0 };
        for _ in 0..=refine {
            let n = dir.norm();
            if n == 0.0 {
                break;
            }
            dir /= n;
            let b = &a + &dir * scale;
            let gb = p.gradient(&b);
            let dg = &gb - &ga;
            let dt = (&b - &a).norm();
            if dt > 0.0 {
                let ratio = if l > 0.0 {
                    dg.norm() / (l * dt)
                } else if dg.norm() == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                lip = lip.max(ratio);
            }
            dir = dg;
        }
    }

    if let (Some(star), true) = (p.minimizer(), l > 0.0) {
        let g_star = p.gradient(&star);
        let scale = 1e-2 * radius.max(1.0);
        for _ in 0..probes.div_ceil(4).min(64) {
            // v <- L v - H v has the flattest curvature direction as its dominant mode.
            let mut dir = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
            for _ in 0..POWER_STEPS {
                let n = dir.norm();
                if n == 0.0 {
                    break;
                }
                dir /= n;
                let hv = (p.gradient(&(&star + &dir * scale)) - &g_star) / scale;
                dir = &dir * l - hv;
            }
            let n = dir.norm();
            if n == 0.0 {
                continue;
            }
            dir /= n;
            for t in [0.05, 0.5] {
                let theta = &star + &dir * (t * radius);
                let g = p.gradient(&theta);
                record_point(&theta, &g);
            }
        }
    }

    let minimizer_grad_norm = p.minimizer().map(|t| p.gradient(&t).norm());

    let mut violations = Vec::new();
    if lip > 1.0 + ASSUMPTION_TOL {
        violations.push(format!("smoothness: ratio {lip:.6} exceeds 1"));
    }
    if let Some(pv) = pl_viol {
        if pv > ASSUMPTION_TOL {
            violations.push(format!("PL: relative violation {pv:.3e}"));
        }
    }
    if let Some(gr) = grad_ratio {
        if gr > 1.0 + ASSUMPTION_TOL {
            violations.push(format!("gradient bound: ratio {gr:.6} exceeds 1"));
        }
    }
    if let Some(gn) = minimizer_grad_norm {
        if gn > ASSUMPTION_TOL {
            violations.push(format!("gradient at minimizer has norm {gn:.3e}"));
        }
    }

    Ok(AssumptionReport {
        probes,
        smoothness: l,
        lipschitz_ratio: lip,
        pl_constant: mu,
        pl_violation: pl_viol,
        grad_bound: m,
        grad_ratio,
        minimizer_grad_norm,
        pass: violations.is_empty(),
        violations,
    })
}

/// Overrides the declared constants of another objective. Used to exercise failing checks.
pub struct WithConstants<'a, O: ?Sized> {
    pub inner: &'a O,
    pub smoothness: f64,
    pub pl_constant: Option<f64>,
    pub grad_bound: Option<f64>,
}

impl<O: Objective + ?Sized> Objective for WithConstants<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&self, theta: &Vector) -> f64 {
        self.inner.value(theta)
    }
    fn gradient(&self, theta: &Vector) -> Vector {
        self.inner.gradient(theta)
    }
    fn optimum_value(&self) -> Option<f64> {
        self.inner.optimum_value()
    }
    fn minimizer(&self) -> Option<Vector> {
        self.inner.minimizer()
    }
    fn smoothness(&self) -> f64 {
        self.smoothness
    }
    fn pl_constant(&self) -> Option<f64> {
        self.pl_constant
    }
    fn grad_bound(&self) -> Option<f64> {
        self.grad_bound
    }
    fn probe_radius(&self) -> f64 {
        self.inner.probe_radius()
    }
}

/// Symmetric eigenvalue extremes `(min, max)`.
pub(crate) fn sym_extremes(m: &crate::Matrix) -> (f64, f64) {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let lo = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    let hi = eig
        .eigenvalues
        .iter()
        .fold(f64::NEG_INFINITY, |a, &x| a.max(x));
    (lo, hi)
}

/// Spectral norm of a general matrix.
pub(crate) fn spectral_norm(m: &crate::Matrix) -> f64 {
    let s = m.clone().svd(false, false).singular_values;
    s.iter().fold(0.0f64, |a, &x| a.max(x))
}
