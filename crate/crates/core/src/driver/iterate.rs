use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::schedules::PowerSchedule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    /// `P(R = k)` proportional to `w_{k+1} gamma_{k+1} lambda_{k+1}`.
    Theorem2Weighted,
    /// `P(R = k) = 1 / (n + 1)`.
    #[default]
    Uniform,
}

/// Law of the randomized iterate `R` over `{0, ..., n}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateDistribution {
    pub kind: SelectionKind,
    /// `w_1, ..., w_{n+1}`.
    pub weights: Vec<f64>,
    pub probabilities: Vec<f64>,
    cdf: Vec<f64>,
}

impl IterateDistribution {
    /// From explicit sequences; element `j - 1` of each slice holds the value at index `j`
    /// for `j = 1..=n+1`.
    pub fn from_sequences(
        kind: SelectionKind,
        sigma2: f64,
        l: f64,
        gammas: &[f64],
        betas: &[f64],
        lambdas: &[f64],
    ) -> Result<Self> {
        let len = gammas.len();
        if len == 0 || betas.len() != len || lambdas.len() != len {
            return Err(Error::Domain(
                "sequences must be nonempty and of equal length".into(),
            ));
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0 && l.is_finite() && l >= 0.0) {
            return Err(Error::Domain("sigma2 and L must be finite and >= 0".into()));
        }
        let (weights, probabilities) = match kind {
            SelectionKind::Uniform => (vec![1.0; len], vec![1.0 / len as f64; len]),
            SelectionKind::Theorem2Weighted => {
                // log w_{k+1} = -sum_{j <= k+1} log(1 + sigma2 delta_j), delta_j = L gamma_j^2 beta_j^2 / 2.
                let mut log_w = Vec::with_capacity(len);
                let mut acc = 0.0;
                for j in 0..len {
                    let delta = l * gammas[j] * gammas[j] * betas[j] * betas[j] / 2.0;
                    acc -= (sigma2 * delta).ln_1p();
                    log_w.push(acc);
                }
                let log_mass: Vec<f64> = (0..len)
                    .map(|j| log_w[j] + gammas[j].ln() + lambdas[j].ln())
                    .collect();
                let mx = log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !mx.is_finite() {
                    return Err(Error::Domain("degenerate iterate weights".into()));
                }
                let mass: Vec<f64> = log_mass.iter().map(|x| (x - mx).exp()).collect();
                let total: f64 = mass.iter().sum();
                let weights = log_w.iter().map(|x| x.exp()).collect();
                (weights, mass.iter().map(|m| m / total).collect())
            }
        };
        let mut cdf = Vec::with_capacity(len);
        let mut c = 0.0;
        for p in &probabilities {
            c += p;
            cdf.push(c);
        }
        Ok(IterateDistribution {
            kind,
            weights,
            probabilities,
            cdf,
        })
    }

    pub fn horizon(&self) -> usize {
        self.probabilities.len() - 1
    }

    /// Inverse-CDF draw of `R`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let k = self.cdf.partition_point(|c| *c <= u);
        k.min(self.cdf.len() - 1)
    }

    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }
}

/// Distribution of `R` over `{0, ..., n}` from the step, envelope and eigenvalue schedules.
pub fn iterate_distribution(
    kind: SelectionKind,
    sigma2: f64,
    l: f64,
    gamma: &PowerSchedule,
    beta: &PowerSchedule,
    lambda: &PowerSchedule,
    n: usize,
) -> Result<IterateDistribution> {
    let idx = 1..=(n as u64 + 1);
    let g: Vec<f64> = idx.clone().map(|j| gamma.at(j)).collect();
    let b: Vec<f64> = idx.clone().map(|j| beta.at(j)).collect();
    let la: Vec<f64> = idx.map(|j| lambda.at(j)).collect();
    IterateDistribution::from_sequences(kind, sigma2, l, &g, &b, &la)
}

pub fn sample_r<R: Rng + ?Sized>(dist: &IterateDistribution, rng: &mut R) -> usize {
    dist.sample(rng)
}
