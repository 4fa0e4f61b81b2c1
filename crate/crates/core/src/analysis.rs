//! Log-log rate fits, bound overlays and Monte Carlo bias-decay fits.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::schedules::classify_rate_regime;
use crate::{Error, Result, Vector};

/// OLS fit of `log y = intercept + slope log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub points: usize,
    /// `stderr` comes from known per-point variances rather than residuals.
    #[serde(default)]
    pub known_variance: bool,
}

impl SlopeFit {
    /// Two-sided Student-t interval for the slope.
    pub fn confidence_interval(&self, level: f64) -> Result<(f64, f64)> {
        if !(level > 0.0 && level < 1.0) || self.points < 3 {
            return Err(Error::Domain(format!("cannot build a {level} interval")));
        }
        let q = if self.known_variance {
            Normal::new(0.0, 1.0)
                .map_err(|e| Error::Domain(e.to_string()))?
                .inverse_cdf(0.5 + level / 2.0)
        } else {
            StudentsT::new(0.0, 1.0, (self.points - 2) as f64)
                .map_err(|e| Error::Domain(e.to_string()))?
                .inverse_cdf(0.5 + level / 2.0)
        };
        Ok((self.slope - q * self.stderr, self.slope + q * self.stderr))
    }
}

pub const MIN_FIT_POINTS: usize = 10;

/// Fit over the points whose abscissa lies in `[window.0, window.1]`.
pub fn fit_loglog_slope(series: &[(f64, f64)], window: (f64, f64)) -> Result<SlopeFit> {
    ols_loglog(series, window, MIN_FIT_POINTS)
}

fn ols_loglog(series: &[(f64, f64)], window: (f64, f64), min_points: usize) -> Result<SlopeFit> {
    if !(window.0 > 0.0 && window.0 < window.1) {
        return Err(Error::Domain(format!("bad window {window:?}")));
    }
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(n, _)| *n >= window.0 && *n <= window.1)
        .copied()
        .collect();
    if pts.len() < min_points.max(3) {
        return Err(Error::Domain(format!(
            "{} points in window, need at least {min_points}",
            pts.len()
        )));
    }
    if let Some((n, y)) = pts.iter().find(|(_, y)| !(*y > 0.0 && y.is_finite())) {
        return Err(Error::Domain(format!("nonpositive value {y} at n = {n}")));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Domain("window holds a single abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let stderr = (sse / (k - 2.0) / sxx).sqrt();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        window,
        r_squared,
        points: pts.len(),
        known_variance: false,
    })
}

/// Weighted fit of `log y` on `log n` where `log y_i` has known variance `var_i`.
fn wls_loglog(pts: &[(f64, f64, f64)]) -> Result<SlopeFit> {
    if pts.len() < 3 {
        return Err(Error::Domain("weighted fit needs at least 3 points".into()));
    }
    if pts
        .iter()
        .any(|(n, y, v)| !(*n > 0.0 && *y > 0.0 && *v > 0.0 && v.is_finite()))
    {
        return Err(Error::Domain(
            "weighted fit needs positive n, y and variances".into(),
        ));
    }
    let w: Vec<f64> = pts.iter().map(|p| 1.0 / p.2).collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(&xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(&ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&xs).map(|(w, x)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = (0..xs.len())
        .map(|i| w[i] * (xs[i] - mx) * (ys[i] - my))
        .sum();
    let syy: f64 = w.iter().zip(&ys).map(|(w, y)| w * (y - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Domain(
            "weighted fit needs distinct abscissae".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = (0..xs.len())
        .map(|i| w[i] * (ys[i] - intercept - slope * xs[i]).powi(2))
        .sum();
    Ok(SlopeFit {
        slope,
        intercept,
        stderr: (1.0 / sxx).sqrt(),
        window: (pts[0].0, pts[pts.len() - 1].0),
        r_squared: if syy > 0.0 { 1.0 - sse / syy } else { 1.0 },
        points: pts.len(),
        known_variance: true,
    })
}

/// Drop the first 10% of a run of `iterations` steps.
pub fn default_window(iterations: u64) -> (f64, f64) {
    ((iterations as f64 / 10.0).max(1.0), iterations as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// PL case: `n^{-gamma+2beta+lambda}` plus the bias floor `max_{n/2<=k<=n} k^{-r}`.
    PlBound,
    /// Non-convex rate from the regime classification.
    NonconvexRate,
    /// AMSGRAD: `log n / sqrt(n) + b_n` with the schedule exponents supplied.
    AmsgradRate,
}

/// Shape of a convergence bound; multiplicative constants are fitted, not modelled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalBound {
    pub kind: BoundKind,
    pub gamma: f64,
    pub beta: f64,
    pub lambda: f64,
    /// `f64::INFINITY` for an unbiased oracle.
    pub r: f64,
    /// Relative weight of the bias term in the PL shape.
    pub bias_weight: f64,
}

impl TheoreticalBound {
    pub fn new(kind: BoundKind, gamma: f64, beta: f64, lambda: f64, r: f64) -> Self {
        TheoreticalBound {
            kind,
            gamma,
            beta,
            lambda,
            r,
            bias_weight: 1.0,
        }
    }

    /// Unnormalized rate expression at `n >= 1`.
    pub fn shape(&self, n: f64) -> Result<f64> {
        let regime = classify_rate_regime(self.gamma, self.beta, self.lambda, self.r)?;
        let log = 1.0 + n.ln();
        Ok(match self.kind {
            BoundKind::NonconvexRate | BoundKind::AmsgradRate => {
                let e = regime.dominant_exponent();
                let base = n.powf(e);
                if regime.dominant_has_log() {
                    base * log
                } else {
                    base
                }
            }
            BoundKind::PlBound => {
                let main = n.powf(-self.gamma + 2.0 * self.beta + self.lambda);
                let floor = if self.r.is_infinite() {
                    0.0
                } else {
                    (n / 2.0).max(1.0).powf(-self.r)
                };
                main + self.bias_weight * floor
            }
        })
    }

    pub fn is_decaying(&self) -> Result<bool> {
        let regime = classify_rate_regime(self.gamma, self.beta, self.lambda, self.r)?;
        Ok(match self.kind {
            BoundKind::PlBound => -self.gamma + 2.0 * self.beta + self.lambda < 0.0 && self.r > 0.0,
            _ => regime.dominant_exponent() < 0.0,
        })
    }
}

/// Evaluate the bound on a grid, scaled so it passes through `anchor` when given.
///
/// The bounded quantity (best gradient norm or gap so far) cannot grow, so the prefix
/// minimum of the rate expression is still a bound; that is what is returned. Log factors
/// enter as `1 + ln n` so the curve stays positive at `n = 1`.
pub fn bound_curve(
    b: &TheoreticalBound,
    n_grid: &[f64],
    anchor: Option<(f64, f64)>,
) -> Result<Vec<(f64, f64)>> {
    if n_grid.iter().any(|n| !(*n >= 1.0)) {
        return Err(Error::Domain("grid points must be >= 1".into()));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("grid must be strictly increasing".into()));
    }
    let scale = match anchor {
        Some((n0, y0)) => {
            if !(y0 > 0.0) {
                return Err(Error::Domain(format!(
                    "anchor value must be positive, got {y0}"
                )));
            }
            y0 / b.shape(n0.max(1.0))?
        }
        None => 1.0,
    };
    let mut out = Vec::with_capacity(n_grid.len());
    let mut running = f64::INFINITY;
    for &n in n_grid {
        running = running.min(b.shape(n)?);
        out.push((n, scale * running));
    }
    Ok(out)
}

/// Log-spaced integer grid between `lo` and `hi` (both kept).
pub fn log_grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    let lo = lo.max(1);
    if hi <= lo || points < 2 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut g: Vec<u64> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as u64)
        .collect();
    g[0] = lo;
    g[points - 1] = hi;
    g.dedup();
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub n: usize,
    /// `|mean - exact|`, or its debiased square when the fit is on squared bias.
    pub bias: f64,
    /// Monte Carlo standard error of the mean, in norm.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDecayFit {
    pub points: Vec<BiasPoint>,
    pub fit: Option<SlopeFit>,
    /// Every measured bias is within 3 standard errors of zero.
    pub indistinguishable: bool,
}

/// Estimate `bias(N) = ||E[estimator(N)] - exact||` by Monte Carlo and fit its decay.
///
/// The fit is weighted by the delta-method variance of each log bias, so its standard
/// error is the CLT prediction rather than a residual estimate.
///
/// With `squared`, the fitted quantity is `||mean - exact||^2 - tr(Cov)/reps`, which removes
/// the Monte Carlo inflation of the squared norm.
pub fn bias_decay_fit<F, R>(
    mut estimator: F,
    exact: &Vector,
    n_grid: &[usize],
    reps: usize,
    squared: bool,
    rng: &mut R,
) -> Result<BiasDecayFit>
where
    F: FnMut(usize, &mut R) -> Result<Vector>,
    R: Rng + ?Sized,
{
    if n_grid.len() < 4 {
        return Err(Error::Domain(
            "bias fits need at least 4 grid points".into(),
        ));
    }
    if reps < 2 {
        return Err(Error::InsufficientReps(format!("{reps} reps")));
    }
    let d = exact.len();
    let mut points = Vec::with_capacity(n_grid.len());
    let mut raw = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut sum = Vector::zeros(d);
        let mut sum_sq = Vector::zeros(d);
        for _ in 0..reps {
            let x = estimator(n, rng)?;
            if x.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: x.len(),
                });
            }
            sum_sq += x.component_mul(&x);
            sum += x;
        }
        let r = reps as f64;
        let mean = &sum / r;
        let var_sum: f64 = (0..d)
            .map(|j| ((sum_sq[j] - r * mean[j] * mean[j]) / (r - 1.0)).max(0.0))
            .sum();
        let se_sq = var_sum / r;
        let dev = (&mean - exact).norm();
        raw.push((dev, se_sq.sqrt()));
        let bias = if squared { dev * dev - se_sq } else { dev };
        points.push(BiasPoint {
            n,
            bias,
            stderr: se_sq.sqrt(),
        });
    }
    let indistinguishable = raw.iter().all(|(b, se)| *b <= 3.0 * se);
    if indistinguishable {
        return Ok(BiasDecayFit {
            points,
            fit: None,
            indistinguishable,
        });
    }
    let (last_bias, last_se) = raw[raw.len() - 1];
    if last_bias <= 3.0 * last_se {
        return Err(Error::InsufficientReps(format!(
            "bias {last_bias:.3e} at N = {} is within 3 standard errors ({last_se:.3e} each)",
            n_grid[n_grid.len() - 1]
        )));
    }
    // Delta method: sd(log b) = se / b, and sd(log b^2) = 2 se / b.
    let pts: Vec<(f64, f64, f64)> = points
        .iter()
        .zip(&raw)
        .map(|(p, (b, se))| {
            let rel = se / b;
            let var = if squared { 4.0 * rel * rel } else { rel * rel };
            (p.n as f64, p.bias, var)
        })
        .collect();
    let fit = wls_loglog(&pts)?;
    Ok(BiasDecayFit {
        points,
        fit: Some(fit),
        indistinguishable,
    })
}
