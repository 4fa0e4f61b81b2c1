//! Diagonal adaptive matrices `A_n` and their spectral diagnostics.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vector};

/// Diagonal matrix with finite nonnegative entries.
///
/// Adaptive preconditioners always produce strictly positive entries; zero entries are
/// admitted so that coordinate-sampling masks share the type.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalMatrix {
    diag: Vector,
}

impl DiagonalMatrix {
    pub fn new(diag: Vector) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::Domain("empty diagonal".into()));
        }
        if diag.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Domain(
                "diagonal entries must be finite and >= 0".into(),
            ));
        }
        Ok(DiagonalMatrix { diag })
    }

    pub fn identity(d: usize) -> Self {
        DiagonalMatrix {
            diag: Vector::from_element(d, 1.0),
        }
    }

    pub fn from_slice(xs: &[f64]) -> Result<Self> {
        Self::new(Vector::from_column_slice(xs))
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &Vector {
        &self.diag
    }

    /// Spectral norm, i.e. the largest entry.
    pub fn norm(&self) -> f64 {
        self.diag.iter().fold(0.0f64, |m, &x| m.max(x))
    }

    /// `A x` for the diagonal `A`.
    pub fn apply(&self, x: &Vector) -> Vector {
        self.diag.component_mul(x)
    }
}

pub fn spectral_bounds(a: &DiagonalMatrix) -> (f64, f64) {
    let lo = a.diag.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    (lo, a.norm())
}

/// Uniformly rescale `a` so that its norm does not exceed `bound`.
///
/// The result satisfies `norm <= bound` exactly and is a fixed point of a second call.
pub fn clip_spectral(a: &DiagonalMatrix, bound: f64) -> Result<DiagonalMatrix> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(Error::Domain(format!(
            "clip bound must be positive, got {bound}"
        )));
    }
    let norm = a.norm();
    if norm <= bound {
        return Ok(a.clone());
    }
    let mut s = bound / norm;
    let mut out = a.diag.map(|x| x * s);
    while out.iter().fold(0.0f64, |m, &x| m.max(x)) > bound {
        s = s.next_down();
        out = a.diag.map(|x| x * s);
    }
    Ok(DiagonalMatrix { diag: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateRule {
    Uniform,
    Weighted,
    GaussSouthwell,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PreconditionerKind {
    Identity,
    Adagrad,
    RmsProp { rho: f64 },
    Amsgrad { rho2: f64 },
    Coordinate { rule: CoordinateRule },
}

impl PreconditionerKind {
    pub fn name(&self) -> &'static str {
        match self {
            PreconditionerKind::Identity => "identity",
            PreconditionerKind::Adagrad => "adagrad",
            PreconditionerKind::RmsProp { .. } => "rmsprop",
            PreconditionerKind::Amsgrad { .. } => "amsgrad",
            PreconditionerKind::Coordinate { .. } => "coordinate",
        }
    }

    fn is_adaptive(&self) -> bool {
        matches!(
            self,
            PreconditionerKind::Adagrad
                | PreconditionerKind::RmsProp { .. }
                | PreconditionerKind::Amsgrad { .. }
        )
    }
}

/// Second-moment state defining `A_n`.
#[derive(Debug, Clone)]
pub struct PreconditionerState {
    kind: PreconditionerKind,
    /// Adagrad running mean, RMSProp EMA or AMSGRAD `V_hat`.
    accum: Vector,
    /// AMSGRAD raw EMA `V_k`.
    ema: Vector,
    /// Per-coordinate running max of `g_j^2`.
    max_sq: Vector,
    count: u64,
    delta: f64,
    sup_seen: f64,
    coord_weights: Vector,
    sampler: Option<WeightedIndex<f64>>,
}

impl PreconditionerState {
    fn base(kind: PreconditionerKind, d: usize, delta: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Domain(format!("delta must be >= 0, got {delta}")));
        }
        Ok(PreconditionerState {
            kind,
            accum: Vector::zeros(d),
            ema: Vector::zeros(d),
            max_sq: Vector::zeros(d),
            count: 0,
            delta,
            sup_seen: 0.0,
            coord_weights: Vector::from_element(d, 1.0 / d as f64),
            sampler: None,
        })
    }

    pub fn identity(d: usize) -> Result<Self> {
        Self::base(PreconditionerKind::Identity, d, 0.0)
    }

    pub fn adagrad(d: usize, delta: f64) -> Result<Self> {
        Self::base(PreconditionerKind::Adagrad, d, delta)
    }

    pub fn rmsprop(d: usize, delta: f64, rho: f64) -> Result<Self> {
        check_factor("rho", rho)?;
        Self::base(PreconditionerKind::RmsProp { rho }, d, delta)
    }

    pub fn amsgrad(d: usize, delta: f64, rho2: f64) -> Result<Self> {
        check_factor("rho2", rho2)?;
        Self::base(PreconditionerKind::Amsgrad { rho2 }, d, delta)
    }

    /// Coordinate sampling. `weights` is required for the weighted rule and ignored otherwise.
    pub fn coordinate(d: usize, rule: CoordinateRule, weights: Option<Vec<f64>>) -> Result<Self> {
        let mut s = Self::base(PreconditionerKind::Coordinate { rule }, d, 0.0)?;
        if rule == CoordinateRule::Weighted {
            let w = weights
                .ok_or_else(|| Error::Domain("weighted rule needs coordinate weights".into()))?;
            if w.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: w.len(),
                });
            }
            if w.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(Error::Domain("coordinate weights must be > 0".into()));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "coordinate weights must sum to 1, got {total}"
                )));
            }
            s.coord_weights = Vector::from_vec(w);
        }
        s.sampler = Some(
            WeightedIndex::new(s.coord_weights.iter().copied())
                .map_err(|e| Error::Domain(e.to_string()))?,
        );
        Ok(s)
    }

    pub fn kind(&self) -> &PreconditionerKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.accum.len()
    }

    pub fn accum(&self) -> &Vector {
        &self.accum
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn coord_weights(&self) -> &Vector {
        &self.coord_weights
    }

    /// Replace the regularizer (decreasing-regularization variant).
    pub fn set_delta(&mut self, delta: f64) -> Result<()> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Domain(format!("delta must be >= 0, got {delta}")));
        }
        self.delta = delta;
        Ok(())
    }

    /// Largest gradient sup-norm absorbed so far.
    pub fn observed_sup_norm(&self) -> f64 {
        self.sup_seen
    }

    /// `[(delta + M_obs^2)^{-1/2}, delta^{-1/2}]` for adaptive kinds with `delta > 0`.
    pub fn bracket(&self) -> Option<(f64, f64)> {
        if !self.kind.is_adaptive() || self.delta <= 0.0 {
            return None;
        }
        let m2 = self.sup_seen * self.sup_seen;
        Some((inv_sqrt(self.delta + m2), inv_sqrt(self.delta)))
    }

    /// Absorb one gradient and return the new `A`. For the coordinate kind the
    /// returned matrix is the expected mask `diag(weights)`.
    pub fn update(&mut self, g: &Vector) -> Result<DiagonalMatrix> {
        match self.kind {
            PreconditionerKind::Identity => {
                self.check(g)?;
                self.absorb_sup(g);
                self.count += 1;
                Ok(DiagonalMatrix::identity(self.dim()))
            }
            PreconditionerKind::Adagrad => self.update_adagrad(g),
            PreconditionerKind::RmsProp { .. } => self.update_rmsprop(g),
            PreconditionerKind::Amsgrad { .. } => self.update_amsgrad(g),
            PreconditionerKind::Coordinate { .. } => {
                self.check(g)?;
                self.absorb_sup(g);
                self.count += 1;
                Ok(DiagonalMatrix {
                    diag: self.coord_weights.clone(),
                })
            }
        }
    }

    pub fn update_adagrad(&mut self, g: &Vector) -> Result<DiagonalMatrix> {
        self.expect_kind(matches!(self.kind, PreconditionerKind::Adagrad), "adagrad")?;
        self.check(g)?;
        let max_sq = self.next_max_sq(g);
        let k = (self.count + 1) as f64;
        let mut accum = self.accum.clone();
        for j in 0..g.len() {
            let mean = accum[j] + (g[j] * g[j] - accum[j]) / k;
            accum[j] = mean.clamp(0.0, max_sq[j]);
        }
        self.commit(g, max_sq, accum, None)
    }

    pub fn update_rmsprop(&mut self, g: &Vector) -> Result<DiagonalMatrix> {
        let rho = match self.kind {
            PreconditionerKind::RmsProp { rho } => rho,
            _ => return Err(self.kind_error("rmsprop")),
        };
        self.check(g)?;
        let max_sq = self.next_max_sq(g);
        let mut accum = self.accum.clone();
        for j in 0..g.len() {
            let v = rho * accum[j] + (1.0 - rho) * g[j] * g[j];
            accum[j] = v.clamp(0.0, max_sq[j]);
        }
        self.commit(g, max_sq, accum, None)
    }

    pub fn update_amsgrad(&mut self, g: &Vector) -> Result<DiagonalMatrix> {
        let rho2 = match self.kind {
            PreconditionerKind::Amsgrad { rho2 } => rho2,
            _ => return Err(self.kind_error("amsgrad")),
        };
        self.check(g)?;
        let max_sq = self.next_max_sq(g);
        let mut ema = self.ema.clone();
        let mut accum = self.accum.clone();
        for j in 0..g.len() {
            let v = rho2 * ema[j] + (1.0 - rho2) * g[j] * g[j];
            ema[j] = v.clamp(0.0, max_sq[j]);
            accum[j] = accum[j].max(ema[j]);
        }
        self.commit(g, max_sq, accum, Some(ema))
    }

    fn next_max_sq(&self, g: &Vector) -> Vector {
        self.max_sq.zip_map(g, |m, x| m.max(x * x))
    }

    fn commit(
        &mut self,
        g: &Vector,
        max_sq: Vector,
        accum: Vector,
        ema: Option<Vector>,
    ) -> Result<DiagonalMatrix> {
        if self.delta == 0.0 && accum.iter().any(|a| *a == 0.0) {
            return Err(Error::Domain(
                "delta = 0 with a zero second moment gives an unbounded preconditioner".into(),
            ));
        }
        self.absorb_sup(g);
        self.max_sq = max_sq;
        self.accum = accum;
        if let Some(e) = ema {
            self.ema = e;
        }
        self.count += 1;
        Ok(self.current())
    }

    /// Draw a coordinate and its 0/1 mask `e_j e_j^T`.
    pub fn coordinate_select<R: Rng + ?Sized>(
        &self,
        g: &Vector,
        rule: CoordinateRule,
        rng: &mut R,
    ) -> Result<(usize, DiagonalMatrix)> {
        let d = self.dim();
        if g.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: g.len(),
            });
        }
        let j = match rule {
            CoordinateRule::Uniform => rng.random_range(0..d),
            CoordinateRule::Weighted => match &self.sampler {
                Some(s) => s.sample(rng),
                None => WeightedIndex::new(self.coord_weights.iter().copied())
                    .map_err(|e| Error::Domain(e.to_string()))?
                    .sample(rng),
            },
            CoordinateRule::GaussSouthwell => gauss_southwell(g)?,
        };
        let mut mask = Vector::zeros(d);
        mask[j] = 1.0;
        Ok((j, DiagonalMatrix { diag: mask }))
    }

    fn current(&self) -> DiagonalMatrix {
        let delta = self.delta;
        DiagonalMatrix {
            diag: self.accum.map(|a| inv_sqrt(delta + a)),
        }
    }

    fn check(&self, g: &Vector) -> Result<()> {
        if g.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: g.len(),
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        Ok(())
    }

    fn absorb_sup(&mut self, g: &Vector) {
        for j in 0..g.len() {
            let a = g[j].abs();
            self.sup_seen = self.sup_seen.max(a);
            self.max_sq[j] = self.max_sq[j].max(g[j] * g[j]);
        }
    }

    fn expect_kind(&self, ok: bool, want: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(self.kind_error(want))
        }
    }

    fn kind_error(&self, want: &str) -> Error {
        Error::Domain(format!("state is {}, not {want}", self.kind.name()))
    }
}

/// Index of the largest `|g_j|`, lowest index on ties.
pub fn gauss_southwell(g: &Vector) -> Result<usize> {
    if g.is_empty() {
        return Err(Error::Domain("empty gradient".into()));
    }
    let mut best = 0;
    let mut best_abs = g[0].abs();
    for (j, x) in g.iter().enumerate().skip(1) {
        if x.is_nan() {
            return Err(Error::NonFinite("gradient"));
        }
        if x.abs() > best_abs {
            best = j;
            best_abs = x.abs();
        }
    }
    Ok(best)
}

#[inline]
fn inv_sqrt(x: f64) -> f64 {
    1.0 / x.sqrt()
}

fn check_factor(name: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in [0, 1), got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn adagrad_first_gradient_delta_zero() {
        let mut s = PreconditionerState::adagrad(2, 0.0).unwrap();
        let a = s.update_adagrad(&v(&[3.0, 4.0])).unwrap();
        assert_eq!(a.diag(), &v(&[1.0 / 3.0, 0.25]));
    }

    #[test]
    fn adagrad_running_mean() {
        let mut s = PreconditionerState::adagrad(2, 1.0).unwrap();
        s.update_adagrad(&v(&[1.0, 0.0])).unwrap();
        let a = s.update_adagrad(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(s.accum(), &v(&[1.0, 0.0]));
        assert!((a.diag()[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(a.diag()[1], 1.0);
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn adagrad_mean_matches_direct_formula() {
        let grads = [[0.3, -1.2], [2.0, 0.5], [-0.7, 0.1], [1.1, -2.2]];
        let mut s = PreconditionerState::adagrad(2, 0.05).unwrap();
        let mut a = DiagonalMatrix::identity(2);
        for g in &grads {
            a = s.update(&v(g)).unwrap();
        }
        for j in 0..2 {
            let mean: f64 = grads.iter().map(|g| g[j] * g[j]).sum::<f64>() / 4.0;
            assert!((a.diag()[j] - (0.05 + mean).powf(-0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn non_finite_gradient_leaves_state_unchanged() {
        let mut s = PreconditionerState::rmsprop(2, 0.1, 0.5).unwrap();
        s.update(&v(&[1.0, 2.0])).unwrap();
        let before = s.accum().clone();
        assert!(s.update(&v(&[f64::NAN, 1.0])).is_err());
        assert!(s.update(&v(&[1.0, f64::INFINITY])).is_err());
        assert_eq!(s.accum(), &before);
        assert_eq!(s.count(), 1);
    }

    #[test]
    fn rmsprop_two_step_ema() {
        let mut s = PreconditionerState::rmsprop(1, 0.0, 0.5).unwrap();
        s.update_rmsprop(&v(&[2.0])).unwrap();
        assert_eq!(s.accum()[0], 2.0);
        s.update_rmsprop(&v(&[4.0])).unwrap();
        assert_eq!(s.accum()[0], 9.0);
    }

    #[test]
    fn rmsprop_rho_zero_is_current_square() {
        let mut s = PreconditionerState::rmsprop(2, 0.1, 0.0).unwrap();
        for g in [[1.0, 3.0], [0.5, -2.0], [4.0, 0.0]] {
            s.update(&v(&g)).unwrap();
            assert_eq!(s.accum(), &v(&[g[0] * g[0], g[1] * g[1]]));
        }
    }

    #[test]
    fn amsgrad_keeps_max() {
        let mut s = PreconditionerState::amsgrad(2, 0.05, 0.0).unwrap();
        let a1 = s.update_amsgrad(&v(&[2.0, -1.0])).unwrap();
        let a2 = s.update_amsgrad(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(a2.diag()[0], 1.0 / (0.05f64 + 4.0).sqrt());
    }

    #[test]
    fn wrong_kind_rejected() {
        let mut s = PreconditionerState::adagrad(2, 0.1).unwrap();
        assert!(s.update_rmsprop(&v(&[1.0, 1.0])).is_err());
        assert!(s.update_amsgrad(&v(&[1.0, 1.0])).is_err());
        assert!(PreconditionerState::rmsprop(2, 0.1, 1.0).is_err());
        assert!(PreconditionerState::amsgrad(2, 0.1, -0.1).is_err());
    }

    #[test]
    fn clip_examples() {
        let a = DiagonalMatrix::from_slice(&[2.0, 1.0]).unwrap();
        let c = clip_spectral(&a, 1.0).unwrap();
        assert_eq!(c.diag(), &v(&[1.0, 0.5]));
        let c = clip_spectral(&a, 3.0).unwrap();
        assert_eq!(c, a);
        assert!(clip_spectral(&a, 0.0).is_err());
    }

    #[test]
    fn spectral_bounds_examples() {
        let a = DiagonalMatrix::from_slice(&[1.0 / 3.0, 0.25]).unwrap();
        assert_eq!(spectral_bounds(&a), (0.25, 1.0 / 3.0));
        let mut s = PreconditionerState::identity(3).unwrap();
        let a = s.update(&v(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(spectral_bounds(&a), (1.0, 1.0));
    }

    #[test]
    fn gauss_southwell_examples() {
        let s = PreconditionerState::coordinate(3, CoordinateRule::GaussSouthwell, None).unwrap();
        let mut rng = seeded(0);
        let (j, mask) = s
            .coordinate_select(
                &v(&[1.0, -5.0, 2.0]),
                CoordinateRule::GaussSouthwell,
                &mut rng,
            )
            .unwrap();
        assert_eq!(j, 1);
        assert_eq!(mask.diag(), &v(&[0.0, 1.0, 0.0]));
        let (j, _) = s
            .coordinate_select(
                &v(&[0.0, 0.0, 0.0]),
                CoordinateRule::GaussSouthwell,
                &mut rng,
            )
            .unwrap();
        assert_eq!(j, 0);
        assert_eq!(gauss_southwell(&v(&[2.0, -2.0, 1.0])).unwrap(), 0);
    }

    #[test]
    fn weighted_frequency() {
        let s = PreconditionerState::coordinate(2, CoordinateRule::Weighted, Some(vec![0.9, 0.1]))
            .unwrap();
        let mut rng = seeded(11);
        let g = v(&[0.0, 0.0]);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                s.coordinate_select(&g, CoordinateRule::Weighted, &mut rng)
                    .unwrap()
                    .0
                    == 0
            })
            .count();
        let f = hits as f64 / n as f64;
        assert!((0.89..=0.91).contains(&f), "{f}");
    }

    #[test]
    fn uniform_chi_square() {
        let d = 4;
        let s = PreconditionerState::coordinate(d, CoordinateRule::Uniform, None).unwrap();
        let mut rng = seeded(5);
        let g = Vector::zeros(d);
        let n = 100_000;
        let mut counts = vec![0usize; d];
        for _ in 0..n {
            counts[s
                .coordinate_select(&g, CoordinateRule::Uniform, &mut rng)
                .unwrap()
                .0] += 1;
        }
        let e = n as f64 / d as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99th percentile of chi-square with 3 degrees of freedom.
        assert!(chi2 < 11.344_866_730_144_37, "{chi2}");
    }

    #[test]
    fn coordinate_weights_validated() {
        assert!(
            PreconditionerState::coordinate(2, CoordinateRule::Weighted, Some(vec![0.5, 0.4]))
                .is_err()
        );
        assert!(
            PreconditionerState::coordinate(2, CoordinateRule::Weighted, Some(vec![1.0, 0.0]))
                .is_err()
        );
        assert!(PreconditionerState::coordinate(2, CoordinateRule::Weighted, None).is_err());
    }

    fn grad_stream() -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..60)
    }

    proptest! {
        #[test]
        fn adaptive_bracket_exact(stream in grad_stream(), delta in 1e-6f64..10.0, rho in 0.0f64..0.999, kind in 0usize..3) {
            let mut s = match kind {
                0 => PreconditionerState::adagrad(3, delta).unwrap(),
                1 => PreconditionerState::rmsprop(3, delta, rho).unwrap(),
                _ => PreconditionerState::amsgrad(3, delta, rho).unwrap(),
            };
            for g in &stream {
                let a = s.update(&v(g)).unwrap();
                let (lo, hi) = spectral_bounds(&a);
                let (blo, bhi) = s.bracket().unwrap();
                prop_assert!(hi <= bhi);
                prop_assert!(lo >= blo);
                prop_assert!(s.accum().iter().all(|x| *x >= 0.0));
            }
        }

        #[test]
        fn rmsprop_accum_below_m_squared(stream in grad_stream(), rho in 0.0f64..0.999) {
            let mut s = PreconditionerState::rmsprop(3, 0.05, rho).unwrap();
            for g in &stream {
                s.update(&v(g)).unwrap();
                let m = s.observed_sup_norm();
                prop_assert!(s.accum().iter().all(|x| *x <= m * m));
            }
        }

        #[test]
        fn amsgrad_monotone(stream in grad_stream(), rho2 in 0.0f64..0.9999, delta in 1e-4f64..1.0) {
            let mut s = PreconditionerState::amsgrad(3, delta, rho2).unwrap();
            let mut prev: Option<DiagonalMatrix> = None;
            let mut prev_acc = s.accum().clone();
            for g in &stream {
                let a = s.update(&v(g)).unwrap();
                prop_assert!(s.accum().iter().zip(prev_acc.iter()).all(|(x, y)| x >= y));
                prev_acc = s.accum().clone();
                if let Some(p) = &prev {
                    prop_assert!(a.diag().iter().zip(p.diag().iter()).all(|(x, y)| x <= y));
                }
                prev = Some(a);
            }
        }

        #[test]
        fn clip_idempotent_and_bounded(xs in prop::collection::vec(0.0f64..1e6, 1..8), b in 1e-6f64..1e3) {
            prop_assume!(xs.iter().any(|x| *x > 0.0));
            let a = DiagonalMatrix::from_slice(&xs).unwrap();
            let c = clip_spectral(&a, b).unwrap();
            prop_assert!(c.norm() <= b);
            let cc = clip_spectral(&c, b).unwrap();
            prop_assert_eq!(c.diag().as_slice(), cc.diag().as_slice());
            if a.norm() > b {
                let s = c.norm() / a.norm();
                for (x, y) in xs.iter().zip(c.diag().iter()) {
                    if *x > 0.0 {
                        prop_assert!((y / x - s).abs() <= 1e-12 * s.max(1.0));
                    }
                }
            }
        }

        #[test]
        fn replay_is_bitwise(stream in grad_stream()) {
            let mut a = PreconditionerState::amsgrad(3, 0.05, 0.999).unwrap();
            let mut b = a.clone();
            for g in &stream {
                let x = a.update(&v(g)).unwrap();
                let y = b.update(&v(g)).unwrap();
                prop_assert_eq!(x.diag().as_slice(), y.diag().as_slice());
            }
        }
    }
}
