//! Power-law schedules and the rate-regime classifier.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Decreasing,
    Increasing,
}

/// `C * n^{-e}` (decreasing) or `C * n^{+e}` (increasing), defined for `n >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSchedule {
    pub coeff: f64,
    pub exponent: f64,
    #[serde(default)]
    pub direction: Direction,
}

impl PowerSchedule {
    pub fn new(coeff: f64, exponent: f64, direction: Direction) -> Result<Self> {
        let s = PowerSchedule {
            coeff,
            exponent,
            direction,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn decreasing(coeff: f64, exponent: f64) -> Result<Self> {
        Self::new(coeff, exponent, Direction::Decreasing)
    }

    pub fn increasing(coeff: f64, exponent: f64) -> Result<Self> {
        Self::new(coeff, exponent, Direction::Increasing)
    }

    pub fn constant(coeff: f64) -> Result<Self> {
        Self::new(coeff, 0.0, Direction::Decreasing)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coeff.is_finite() && self.coeff > 0.0) {
            return Err(Error::Domain(format!(
                "schedule coefficient must be positive, got {}",
                self.coeff
            )));
        }
        if !(self.exponent.is_finite() && self.exponent >= 0.0) {
            return Err(Error::Domain(format!(
                "schedule exponent must be nonnegative, got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    /// Signed exponent: `value(n) = coeff * n^{signed_exponent()}`.
    pub fn signed_exponent(&self) -> f64 {
        match self.direction {
            Direction::Decreasing => -self.exponent,
            Direction::Increasing => self.exponent,
        }
    }

    pub fn value(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::Domain("schedules are 1-indexed; n = 0".into()));
        }
        Ok(self.at(n))
    }

    /// `value` without the domain check; `n` must be at least 1.
    #[inline]
    pub fn at(&self, n: u64) -> f64 {
        debug_assert!(n >= 1);
        if self.exponent == 0.0 {
            return self.coeff;
        }
        let p = (n as f64).powf(self.exponent);
        match self.direction {
            Direction::Decreasing => self.coeff / p,
            Direction::Increasing => self.coeff * p,
        }
    }
}

pub fn schedule_value(s: &PowerSchedule, n: u64) -> Result<f64> {
    s.value(n)
}

/// Decay exponent of the bias term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasExponent {
    /// `r = 0`: the bias does not vanish.
    Constant,
    /// `r = infinity`: the oracle is unbiased, no bias term.
    Absent,
    /// Rate `n^{value}` (value < 0).
    Rate { exponent: f64, log_factor: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRegime {
    pub leading_exponent: f64,
    pub has_log_factor: bool,
    pub bias_exponent: BiasExponent,
}

impl RateRegime {
    /// Exponent of the slowest term, i.e. the predicted log-log slope of the bound.
    pub fn dominant_exponent(&self) -> f64 {
        match self.bias_exponent {
            BiasExponent::Constant => 0.0,
            BiasExponent::Absent => self.leading_exponent,
            BiasExponent::Rate { exponent, .. } => exponent.max(self.leading_exponent),
        }
    }

    /// Whether the dominant term carries a `log n` factor.
    pub fn dominant_has_log(&self) -> bool {
        match self.bias_exponent {
            BiasExponent::Constant => false,
            BiasExponent::Absent => self.has_log_factor,
            BiasExponent::Rate {
                exponent,
                log_factor,
            } => {
                if exponent > self.leading_exponent + BOUNDARY_TOL {
                    log_factor
                } else if exponent + BOUNDARY_TOL < self.leading_exponent {
                    self.has_log_factor
                } else {
                    log_factor || self.has_log_factor
                }
            }
        }
    }
}

/// Bias decay exponent `r` of `r_n = C n^{-r}`; `f64::INFINITY` encodes an unbiased oracle.
pub fn classify_rate_regime(gamma: f64, beta: f64, lambda: f64, r: f64) -> Result<RateRegime> {
    for (name, v) in [("gamma", gamma), ("beta", beta), ("lambda", lambda)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Domain(format!(
                "{name} must be finite and nonnegative, got {v}"
            )));
        }
    }
    if r.is_nan() || r < 0.0 {
        return Err(Error::Domain(format!("r must be nonnegative, got {r}")));
    }
    if gamma + lambda >= 1.0 {
        return Err(Error::Inadmissible(gamma + lambda));
    }

    let split = gamma - beta - 0.5;
    let (leading_exponent, has_log_factor) = if split.abs() <= BOUNDARY_TOL {
        (gamma + lambda - 1.0, true)
    } else if split < 0.0 {
        (-gamma + lambda + 2.0 * beta, false)
    } else {
        (gamma + lambda - 1.0, false)
    };

    let bias_exponent = if r.is_infinite() {
        BiasExponent::Absent
    } else if r == 0.0 {
        BiasExponent::Constant
    } else {
        let s = r + lambda + gamma - 1.0;
        if s.abs() <= BOUNDARY_TOL {
            BiasExponent::Rate {
                exponent: gamma + lambda - 1.0,
                log_factor: true,
            }
        } else if s < 0.0 {
            BiasExponent::Rate {
                exponent: -r,
                log_factor: false,
            }
        } else {
            BiasExponent::Rate {
                exponent: gamma + lambda - 1.0,
                log_factor: false,
            }
        }
    };

    Ok(RateRegime {
        leading_exponent,
        has_log_factor,
        bias_exponent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn value_examples() {
        let s = PowerSchedule::decreasing(1.0, 0.5).unwrap();
        assert_eq!(s.value(4).unwrap(), 0.5);
        let s = PowerSchedule::decreasing(0.01, 0.5).unwrap();
        assert_eq!(s.value(1).unwrap(), 0.01);
        let s = PowerSchedule::constant(3.0).unwrap();
        assert_eq!(s.value(1_000_000).unwrap(), 3.0);
        let s = PowerSchedule::increasing(2.0, 1.0).unwrap();
        assert_eq!(s.value(5).unwrap(), 10.0);
    }

    #[test]
    fn zero_index_rejected() {
        let s = PowerSchedule::decreasing(1.0, 0.5).unwrap();
        assert!(matches!(s.value(0), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(PowerSchedule::decreasing(0.0, 0.5).is_err());
        assert!(PowerSchedule::decreasing(1.0, -0.1).is_err());
        assert!(PowerSchedule::decreasing(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn regime_log_boundary_unbiased() {
        let r = classify_rate_regime(0.5, 0.0, 0.0, f64::INFINITY).unwrap();
        assert_eq!(r.leading_exponent, -0.5);
        assert!(r.has_log_factor);
        assert_eq!(r.bias_exponent, BiasExponent::Absent);
        assert_eq!(r.dominant_exponent(), -0.5);
    }

    #[test]
    fn regime_slow_bias_dominates() {
        let r = classify_rate_regime(0.5, 0.0, 0.0, 0.25).unwrap();
        assert_eq!(
            r.bias_exponent,
            BiasExponent::Rate {
                exponent: -0.25,
                log_factor: false
            }
        );
        assert_eq!(r.dominant_exponent(), -0.25);
        assert!(!r.dominant_has_log());
    }

    #[test]
    fn regime_constant_steps() {
        let r = classify_rate_regime(0.0, 0.0, 0.0, f64::INFINITY).unwrap();
        assert_eq!(r.leading_exponent, 0.0);
        assert!(!r.has_log_factor);
    }

    #[test]
    fn regime_constant_bias() {
        let r = classify_rate_regime(0.5, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(r.bias_exponent, BiasExponent::Constant);
        assert_eq!(r.dominant_exponent(), 0.0);
    }

    #[test]
    fn regime_fast_bias_and_boundary() {
        let r = classify_rate_regime(0.5, 0.0, 0.0, 2.0).unwrap();
        assert_eq!(
            r.bias_exponent,
            BiasExponent::Rate {
                exponent: -0.5,
                log_factor: false
            }
        );
        let r = classify_rate_regime(0.5, 0.0, 0.0, 0.5).unwrap();
        assert_eq!(
            r.bias_exponent,
            BiasExponent::Rate {
                exponent: -0.5,
                log_factor: true
            }
        );
    }

    #[test]
    fn regime_second_case() {
        let r = classify_rate_regime(0.75, 0.0, 0.0, f64::INFINITY).unwrap();
        assert_eq!(r.leading_exponent, -0.25);
        assert!(!r.has_log_factor);
        let r = classify_rate_regime(0.25, 0.0, 0.0, f64::INFINITY).unwrap();
        assert_eq!(r.leading_exponent, -0.25);
    }

    #[test]
    fn inadmissible_rejected() {
        assert!(matches!(
            classify_rate_regime(0.8, 0.0, 0.3, 1.0),
            Err(Error::Inadmissible(_))
        ));
        assert!(classify_rate_regime(0.5, 0.0, 0.5, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn decreasing_is_monotone(c in 1e-6f64..1e6, e in 0.0f64..4.0, n in 1u64..10_000_000) {
            let s = PowerSchedule::decreasing(c, e).unwrap();
            let a = s.value(n).unwrap();
            let b = s.value(n + 1).unwrap();
            prop_assert!(b <= a);
            prop_assert!(a > 0.0);
        }

        #[test]
        fn increasing_is_monotone(c in 1e-6f64..1e3, e in 0.0f64..2.0, n in 1u64..10_000_000) {
            let s = PowerSchedule::increasing(c, e).unwrap();
            prop_assert!(s.value(n + 1).unwrap() >= s.value(n).unwrap());
        }

        #[test]
        fn leading_exponent_nonpositive(g in 0.0f64..0.99, l in 0.0f64..0.99, r in 0.0f64..3.0) {
            prop_assume!(g + l < 1.0);
            // beta = 0: the admissible region where the first case cannot exceed zero
            // requires lambda <= gamma; the classifier itself is total either way.
            let reg = classify_rate_regime(g, 0.0, l, r).unwrap();
            if l <= g {
                prop_assert!(reg.leading_exponent <= 1e-12);
            }
        }

        #[test]
        fn continuous_across_log_boundary(b in 0.0f64..0.2, l in 0.0f64..0.2, eps in 1e-9f64..1e-6) {
            let g = 0.5 + b;
            prop_assume!(g + eps + l < 1.0);
            let lo = classify_rate_regime(g - eps, b, l, f64::INFINITY).unwrap();
            let mid = classify_rate_regime(g, b, l, f64::INFINITY).unwrap();
            let hi = classify_rate_regime(g + eps, b, l, f64::INFINITY).unwrap();
            prop_assert!((lo.leading_exponent - mid.leading_exponent).abs() <= 4.0 * eps);
            prop_assert!((hi.leading_exponent - mid.leading_exponent).abs() <= 4.0 * eps);
            prop_assert!(mid.has_log_factor);
        }
    }
}
