use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use super::GradientSample;
use crate::{Error, Result, Vector};

/// A target `pi` known through a proposal `lambda` and unnormalized weights `w = d pi / d lambda`.
pub trait SnisTarget {
    type Point: Clone;

    fn sample_proposal<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Point;
    fn log_weight(&self, x: &Self::Point) -> f64;
    fn integrand(&self, x: &Self::Point) -> Vector;
    /// `pi(f)`, when tractable.
    fn exact_value(&self) -> Option<Vector> {
        None
    }
}

/// Normalized weights from log-weights; errors when every weight underflows.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateWeights(if max.is_nan() {
            f64::NAN
        } else {
            0.0
        }));
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::DegenerateWeights(total));
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Self-normalized estimate over a fixed particle set. Returns the estimate and the weights.
pub fn snis_on_particles<T: SnisTarget + ?Sized>(
    target: &T,
    particles: &[T::Point],
) -> Result<(Vector, Vec<f64>)> {
    let lw: Vec<f64> = particles.iter().map(|x| target.log_weight(x)).collect();
    let w = normalize_log_weights(&lw)?;
    let mut est: Option<Vector> = None;
    for (x, wi) in particles.iter().zip(&w) {
        let fx = target.integrand(x) * *wi;
        est = Some(match est {
            Some(e) => e + fx,
            None => fx,
        });
    }
    Ok((est.expect("at least one particle"), w))
}

/// `sum_i omega_i f(X_i)` with `X_i` i.i.d. from the proposal.
pub fn snis_estimate<T: SnisTarget + ?Sized, R: Rng + ?Sized>(
    target: &T,
    n: usize,
    rng: &mut R,
) -> Result<GradientSample> {
    if n == 0 {
        return Err(Error::Domain("SNIS needs at least one sample".into()));
    }
    let xs: Vec<T::Point> = (0..n).map(|_| target.sample_proposal(rng)).collect();
    let (est, _) = snis_on_particles(target, &xs)?;
    Ok(GradientSample {
        estimate: est,
        true_gradient: target.exact_value(),
        bias_target: None,
        inner_samples: n,
    })
}

/// Bias-reduced SNIS: an iterated SIR chain with `k` particles per sweep.
///
/// Each sweep puts the retained particle at a uniformly chosen slot, refreshes the other
/// `k - 1` from the proposal, self-normalizes and selects the next retained particle.
/// The initial retained particle is a proposal draw. The estimate averages the per-sweep
/// self-normalized values over sweeps `t0 + 1 ..= t_max`.
pub fn br_snis_estimate<T: SnisTarget + ?Sized, R: Rng + ?Sized>(
    target: &T,
    k: usize,
    t0: usize,
    t_max: usize,
    rng: &mut R,
) -> Result<GradientSample> {
    if k < 2 {
        return Err(Error::Domain("BR-SNIS needs at least two particles".into()));
    }
    if t0 >= t_max {
        return Err(Error::Domain(format!(
            "need t0 < t_max, got {t0} >= {t_max}"
        )));
    }
    let mut retained = target.sample_proposal(rng);
    let mut drawn = 1usize;
    let mut acc: Option<Vector> = None;
    let mut particles: Vec<T::Point> = Vec::with_capacity(k);
    for t in 1..=t_max {
        let slot = rng.random_range(0..k);
        particles.clear();
        for i in 0..k {
            if i == slot {
                particles.push(retained.clone());
            } else {
                particles.push(target.sample_proposal(rng));
                drawn += 1;
            }
        }
        let (est, w) = snis_on_particles(target, &particles)?;
        if t > t0 {
            acc = Some(match acc {
                Some(a) => a + est,
                None => est,
            });
        }
        let pick = WeightedIndex::new(&w)
            .map_err(|_| Error::DegenerateWeights(w.iter().sum()))?
            .sample(rng);
        retained = particles[pick].clone();
    }
    let est = acc.expect("t_max > t0") / (t_max - t0) as f64;
    Ok(GradientSample {
        estimate: est,
        true_gradient: target.exact_value(),
        bias_target: None,
        inner_samples: drawn,
    })
}

/// Target on a finite support: proposal probabilities, weights and integrand values per atom.
#[derive(Debug, Clone)]
pub struct FiniteTarget {
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
    pub values: Vec<Vector>,
    cdf: WeightedIndex<f64>,
}

impl FiniteTarget {
    pub fn new(probs: Vec<f64>, weights: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        if probs.is_empty() || probs.len() != weights.len() || probs.len() != values.len() {
            return Err(Error::Domain(
                "support arrays must be nonempty and aligned".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Domain(
                "weights must be positive on the support".into(),
            ));
        }
        let cdf = WeightedIndex::new(&probs).map_err(|e| Error::Domain(e.to_string()))?;
        Ok(FiniteTarget {
            probs,
            weights,
            values,
            cdf,
        })
    }

    /// Proposal uniform on {1, 2}, `w(1) = 1`, `w(2) = 3`, `f(x) = x`; `pi(f) = 7/4`.
    pub fn two_point_toy() -> Self {
        FiniteTarget::new(
            vec![0.5, 0.5],
            vec![1.0, 3.0],
            vec![Vector::from_element(1, 1.0), Vector::from_element(1, 2.0)],
        )
        .expect("valid toy")
    }

    /// `lambda(w^2) / lambda(w)^2`.
    pub fn weight_moment_ratio(&self) -> f64 {
        let m1: f64 = self
            .probs
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| p * w)
            .sum();
        let m2: f64 = self
            .probs
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| p * w * w)
            .sum();
        m2 / (m1 * m1)
    }

    /// `E[SNIS_N]` by summing over every outcome tuple in the support^N lattice.
    pub fn snis_expectation_exact(&self, n: usize) -> Result<Vector> {
        if n == 0 {
            return Err(Error::Domain("N must be positive".into()));
        }
        let s = self.probs.len();
        let total = s
            .checked_pow(n as u32)
            .filter(|t| *t <= 1 << 24)
            .ok_or_else(|| Error::Domain("enumeration too large".into()))?;
        let mut out = Vector::zeros(self.values[0].len());
        let mut idx = vec![0usize; n];
        for code in 0..total {
            let mut c = code;
            let mut p = 1.0;
            for slot in idx.iter_mut() {
                *slot = c % s;
                c /= s;
                p *= self.probs[*slot];
            }
            let (est, _) = snis_on_particles(self, &idx)?;
            out += est * p;
        }
        Ok(out)
    }
}

impl SnisTarget for FiniteTarget {
    type Point = usize;

    fn sample_proposal<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.cdf.sample(rng)
    }

    fn log_weight(&self, x: &usize) -> f64 {
        self.weights[*x].ln()
    }

    fn integrand(&self, x: &usize) -> Vector {
        self.values[*x].clone()
    }

    fn exact_value(&self) -> Option<Vector> {
        let z: f64 = self
            .probs
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| p * w)
            .sum();
        let mut v = Vector::zeros(self.values[0].len());
        for ((p, w), f) in self.probs.iter().zip(&self.weights).zip(&self.values) {
            v += f * (p * w / z);
        }
        Some(v)
    }
}

/// Target `N(mean, I)` seen through the proposal `N(0, scale^2 I)`, integrand `f(x) = x`.
#[derive(Debug, Clone)]
pub struct GaussianShiftTarget {
    pub mean: Vector,
    pub scale: f64,
}

impl GaussianShiftTarget {
    pub fn new(mean: Vector, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 1.0) {
            // scale <= 1 gives unbounded weight variance.
            return Err(Error::Domain(format!(
                "proposal scale must exceed 1, got {scale}"
            )));
        }
        Ok(GaussianShiftTarget { mean, scale })
    }
}

impl SnisTarget for GaussianShiftTarget {
    type Point = Vector;

    fn sample_proposal<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        Vector::from_fn(self.mean.len(), |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            self.scale * z
        })
    }

    fn log_weight(&self, x: &Vector) -> f64 {
        -0.5 * (x - &self.mean).norm_squared() + 0.5 * x.norm_squared() / (self.scale * self.scale)
    }

    fn integrand(&self, x: &Vector) -> Vector {
        x.clone()
    }

    fn exact_value(&self) -> Option<Vector> {
        Some(self.mean.clone())
    }
}
