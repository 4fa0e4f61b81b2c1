//! Optimization loops, randomized-iterate selection and trace recording.

mod iterate;
mod trace;

pub use iterate::{iterate_distribution, sample_r, IterateDistribution, SelectionKind};
pub use trace::{series, Trace, TraceMeta, TraceRecord, TRACE_HEADER};

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::oracles::{bilevel_oracle, inner_sgd, GradientSample, InverseEstimator, Oracle};
use crate::preconditioners::{
    clip_spectral, spectral_bounds, CoordinateRule, DiagonalMatrix, PreconditionerState,
};
use crate::problems::{BilevelProblem, Objective, Problem};
use crate::rng::SimRng;
use crate::schedules::PowerSchedule;
use crate::{Error, Result, Vector};

pub const DEFAULT_DIVERGENCE_CAP: f64 = 1e12;

fn default_delta() -> f64 {
    0.05
}
fn default_rho() -> f64 {
    0.99
}
fn default_rho1() -> f64 {
    0.9
}
fn default_rho2() -> f64 {
    0.999
}

/// Preconditioner descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PreconditionerSpec {
    Identity,
    Adagrad {
        #[serde(default = "default_delta")]
        delta: f64,
    },
    #[serde(rename = "rmsprop")]
    RmsProp {
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_rho")]
        rho: f64,
    },
    Amsgrad {
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_rho1")]
        rho1: f64,
        #[serde(default = "default_rho2")]
        rho2: f64,
    },
    Coordinate {
        rule: CoordinateRule,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
}

impl PreconditionerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            PreconditionerSpec::Identity => "identity",
            PreconditionerSpec::Adagrad { .. } => "adagrad",
            PreconditionerSpec::RmsProp { .. } => "rmsprop",
            PreconditionerSpec::Amsgrad { .. } => "amsgrad",
            PreconditionerSpec::Coordinate { .. } => "coordinate",
        }
    }

    pub fn build(&self, d: usize) -> Result<PreconditionerState> {
        match self {
            PreconditionerSpec::Identity => PreconditionerState::identity(d),
            PreconditionerSpec::Adagrad { delta } => PreconditionerState::adagrad(d, *delta),
            PreconditionerSpec::RmsProp { delta, rho } => {
                PreconditionerState::rmsprop(d, *delta, *rho)
            }
            PreconditionerSpec::Amsgrad { delta, rho1, rho2 } => {
                if !(0.0..1.0).contains(rho1) {
                    return Err(Error::Domain(format!(
                        "rho1 must lie in [0, 1), got {rho1}"
                    )));
                }
                PreconditionerState::amsgrad(d, *delta, *rho2)
            }
            PreconditionerSpec::Coordinate { rule, weights } => {
                PreconditionerState::coordinate(d, *rule, weights.clone())
            }
        }
    }

    fn momentum(&self) -> Option<f64> {
        match self {
            PreconditionerSpec::Amsgrad { rho1, .. } => Some(*rho1),
            _ => None,
        }
    }
}

/// How `delta` evolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    #[default]
    Constant,
    /// `delta_n = beta_{n+1}^{-2}`.
    Schedule,
}

/// Loop settings shared by every driver.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub theta0: Vector,
    pub iterations: usize,
    pub gamma: PowerSchedule,
    pub beta: PowerSchedule,
    pub lambda: PowerSchedule,
    /// Clip `A_n` to `beta_{n+1}`.
    pub clip: bool,
    pub regularization: Regularization,
    pub divergence_cap: f64,
    pub keep_iterates: bool,
    /// `sigma1` of the expected-smoothness condition; enables the step-cap warning count.
    pub sigma1: Option<f64>,
}

impl RunSettings {
    pub fn new(theta0: Vector, iterations: usize, gamma: PowerSchedule) -> Self {
        RunSettings {
            theta0,
            iterations,
            gamma,
            beta: PowerSchedule::constant(1.0).expect("valid"),
            lambda: PowerSchedule::constant(1.0).expect("valid"),
            clip: false,
            regularization: Regularization::Constant,
            divergence_cap: DEFAULT_DIVERGENCE_CAP,
            keep_iterates: false,
            sigma1: None,
        }
    }
}

/// `theta - gamma (A o H)`.
pub fn asa_step(theta: &Vector, gamma: f64, a: &DiagonalMatrix, h: &Vector) -> Result<Vector> {
    if theta.len() != a.dim() || h.len() != a.dim() {
        return Err(Error::Dimension {
            expected: theta.len(),
            got: h.len().min(a.dim()),
        });
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Domain(format!(
            "step size must be positive, got {gamma}"
        )));
    }
    if theta.iter().chain(h.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("step input"));
    }
    Ok(theta - a.apply(h) * gamma)
}

/// Adaptive SA with an identity, Adagrad, RMSProp or coordinate preconditioner.
pub fn run_asa(
    problem: &Problem,
    oracle: &mut Oracle,
    precond: &PreconditionerSpec,
    settings: &RunSettings,
    rng: &mut SimRng,
) -> Result<Trace> {
    if matches!(precond, PreconditionerSpec::Amsgrad { .. }) {
        return Err(Error::Config("AMSGRAD runs through run_amsgrad".into()));
    }
    run_loop(
        problem,
        precond,
        settings,
        |t, n, r| oracle.sample(problem, t, n, r),
        rng,
    )
}

/// AMSGRAD: first moment `m_k` with `rho1`, second moment with the max trick.
pub fn run_amsgrad(
    problem: &Problem,
    oracle: &mut Oracle,
    precond: &PreconditionerSpec,
    settings: &RunSettings,
    rng: &mut SimRng,
) -> Result<Trace> {
    if !matches!(precond, PreconditionerSpec::Amsgrad { .. }) {
        return Err(Error::Config(
            "run_amsgrad needs an amsgrad preconditioner".into(),
        ));
    }
    run_loop(
        problem,
        precond,
        settings,
        |t, n, r| oracle.sample(problem, t, n, r),
        rng,
    )
}

/// Dispatch on the preconditioner kind.
pub fn run_single(
    problem: &Problem,
    oracle: &mut Oracle,
    precond: &PreconditionerSpec,
    settings: &RunSettings,
    rng: &mut SimRng,
) -> Result<Trace> {
    match precond {
        PreconditionerSpec::Amsgrad { .. } => run_amsgrad(problem, oracle, precond, settings, rng),
        _ => run_asa(problem, oracle, precond, settings, rng),
    }
}

/// Inner step size for the bilevel loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerStep {
    /// `coeff n^{-1/2} / T` at outer iteration `n`.
    Schedule {
        coeff: f64,
    },
    Constant {
        value: f64,
    },
}

impl InnerStep {
    pub fn at(&self, n: u64, t: usize) -> f64 {
        match *self {
            InnerStep::Schedule { coeff } => coeff / (n as f64).sqrt() / t.max(1) as f64,
            InnerStep::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BilevelSettings {
    pub run: RunSettings,
    pub precond: PreconditionerSpec,
    pub phi0: Vector,
    pub inner_steps: usize,
    pub inner_step: InnerStep,
    pub inverse: InverseEstimator,
}

/// Alternate `T` inner SGD steps on `phi` with one hypergradient step on `theta`.
pub fn run_bilevel(
    bl: &BilevelProblem,
    settings: &BilevelSettings,
    rng: &mut SimRng,
) -> Result<Trace> {
    if settings.phi0.len() != bl.phi_dim() {
        return Err(Error::Dimension {
            expected: bl.phi_dim(),
            got: settings.phi0.len(),
        });
    }
    let reduced = bl.reduced();
    let mut phi = settings.phi0.clone();
    let t = settings.inner_steps;
    let inner = settings.inner_step;
    let inverse = settings.inverse;
    run_loop(
        &reduced,
        &settings.precond,
        &settings.run,
        |theta, n, r| {
            if t > 0 {
                phi = inner_sgd(bl, theta, &phi, t, inner.at(n, t), r)?;
            }
            bilevel_oracle(bl, theta, &phi, inverse, r)
        },
        rng,
    )
}

fn run_loop<O, F>(
    obj: &O,
    spec: &PreconditionerSpec,
    s: &RunSettings,
    mut draw: F,
    rng: &mut SimRng,
) -> Result<Trace>
where
    O: Objective + ?Sized,
    F: FnMut(&Vector, u64, &mut SimRng) -> Result<GradientSample>,
{
    let d = obj.dim();
    if s.theta0.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: s.theta0.len(),
        });
    }
    if !(s.divergence_cap > 0.0) {
        return Err(Error::Config("divergence cap must be positive".into()));
    }
    let started = Instant::now();
    let mut state = spec.build(d)?;
    let rule = match spec {
        PreconditionerSpec::Coordinate { rule, .. } => Some(*rule),
        _ => None,
    };
    let rho1 = spec.momentum();
    let mut m = Vector::zeros(d);
    let vstar = obj.optimum_value();
    let l = obj.smoothness();

    let mut trace = Trace {
        records: Vec::with_capacity(s.iterations + 1),
        ..Default::default()
    };
    let mut iterates = s
        .keep_iterates
        .then(|| Vec::with_capacity(s.iterations + 1));
    let mut theta = s.theta0.clone();
    let mut best = f64::INFINITY;
    let mut best_theta = theta.clone();
    let mut best_n = 0;
    let mut prev_lmax = f64::INFINITY;
    let mut h_sup = 0.0f64;
    let mut momentum_ratio = rho1.map(|_| 0.0f64);

    let observe = |theta: &Vector| {
        let grad = obj.gradient(theta);
        let gap = vstar.map(|v| obj.value(theta) - v);
        (gap, grad.norm_squared())
    };

    for k in 0..s.iterations {
        let n = k as u64 + 1;
        let (gap, gns) = observe(&theta);
        let score = gap.unwrap_or(gns);
        if score < best {
            best = score;
            best_theta = theta.clone();
            best_n = k as u64;
        }
        if let Some(it) = iterates.as_mut() {
            it.push(theta.clone());
        }

        let sample = draw(&theta, n, rng)?;
        if sample.estimate.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: sample.estimate.len(),
            });
        }
        if sample.estimate.iter().any(|x| !x.is_finite()) {
            trace.records.push(partial_record(k as u64, gap, gns));
            return Err(diverged(trace, k, f64::NAN));
        }
        let h = &sample.estimate;

        let beta_n = s.beta.at(n);
        if s.regularization == Regularization::Schedule
            && !matches!(
                spec,
                PreconditionerSpec::Identity | PreconditionerSpec::Coordinate { .. }
            )
        {
            state.set_delta(1.0 / (beta_n * beta_n))?;
        }
        let a = state.update(h)?;
        let (lo, hi) = spectral_bounds(&a);
        if let Some((blo, bhi)) = state.bracket() {
            trace.bracket_checks += 1;
            if hi > bhi || lo < blo {
                trace.bracket_violations += 1;
            }
        }
        if rho1.is_some() && s.regularization == Regularization::Constant {
            if hi > prev_lmax {
                trace.monotone_violations += 1;
            }
            prev_lmax = hi;
        }
        let a = if s.clip {
            clip_spectral(&a, beta_n)?
        } else {
            a
        };

        let (used, reported) = match rule {
            Some(r) => {
                let (_, mask) = state.coordinate_select(h, r, rng)?;
                let rep = if r == CoordinateRule::GaussSouthwell {
                    mask.clone()
                } else {
                    a
                };
                (mask, rep)
            }
            None => (a.clone(), a),
        };

        let direction = match rho1 {
            Some(r1) => {
                m = &m * r1 + h * (1.0 - r1);
                h_sup = h_sup.max(h.norm());
                if let Some(mr) = momentum_ratio.as_mut() {
                    if h_sup > 0.0 {
                        *mr = mr.max(m.norm() / h_sup);
                    }
                }
                m.clone()
            }
            None => h.clone(),
        };

        let gamma_n = s.gamma.at(n);
        if let Some(s1) = s.sigma1 {
            if s1 > 0.0 && l > 0.0 && gamma_n > s.lambda.at(n) / (s1 * l * beta_n * beta_n) {
                trace.step_cap_warnings += 1;
            }
        }
        let next = asa_step(&theta, gamma_n, &used, &direction)?;
        let (rlo, rhi) = spectral_bounds(&reported);
        trace.records.push(TraceRecord {
            n: k as u64,
            v_gap: gap,
            grad_norm_sq: gns,
            step: Some(gamma_n),
            bias_norm: sample.bias_target.as_ref().map(|b| b.norm()),
            a_lmin: Some(rlo),
            a_lmax: Some(rhi),
            inner_samples: Some(sample.inner_samples),
        });
        theta = next;
        let norm = theta.norm();
        if !norm.is_finite() || norm > s.divergence_cap {
            let (gap, gns) = observe(&theta);
            trace.records.push(partial_record(n, gap, gns));
            return Err(diverged(trace, k + 1, norm));
        }
    }

    let (gap, gns) = observe(&theta);
    let score = gap.unwrap_or(gns);
    if score < best {
        best_theta = theta.clone();
        best_n = s.iterations as u64;
    }
    trace
        .records
        .push(partial_record(s.iterations as u64, gap, gns));
    if let Some(it) = iterates.as_mut() {
        it.push(theta.clone());
    }
    trace.final_theta = theta;
    trace.best_theta = best_theta;
    trace.best_n = best_n;
    trace.iterates = iterates;
    trace.momentum_ratio = momentum_ratio;
    trace.meta.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(trace)
}

fn partial_record(n: u64, gap: Option<f64>, gns: f64) -> TraceRecord {
    TraceRecord {
        n,
        v_gap: gap,
        grad_norm_sq: gns,
        step: None,
        bias_norm: None,
        a_lmin: None,
        a_lmax: None,
        inner_samples: None,
    }
}

fn diverged(trace: Trace, iteration: usize, norm: f64) -> Error {
    Error::Diverged {
        iteration,
        norm,
        partial: Box::new(trace),
    }
}

/// Draws of the randomized iterate over a finished trace.
#[derive(Debug, Clone, Serialize)]
pub struct RandomizedIterates {
    pub kind: SelectionKind,
    /// `beta_j` taken from the observed `A_lmax` instead of the schedule.
    pub empirical_beta_weights: bool,
    pub indices: Vec<usize>,
    pub v_gap: Vec<Option<f64>>,
    pub grad_norm_sq: Vec<f64>,
}

/// Sample `draws` values of `R` over iterates `0..iterations-1` of a trace.
///
/// Without clipping the schedule `beta` need not bound `A_n`, so the weights use the
/// observed `A_lmax` of each step.
pub fn randomized_iterates<R: Rng + ?Sized>(
    trace: &Trace,
    settings: &RunSettings,
    kind: SelectionKind,
    sigma2: f64,
    l: f64,
    draws: usize,
    rng: &mut R,
) -> Result<RandomizedIterates> {
    let steps: Vec<&TraceRecord> = trace.records.iter().filter(|r| r.step.is_some()).collect();
    if steps.is_empty() {
        return Err(Error::Domain("trace has no steps".into()));
    }
    let idx = 1..=steps.len() as u64;
    let gammas: Vec<f64> = idx.clone().map(|j| settings.gamma.at(j)).collect();
    let lambdas: Vec<f64> = idx.clone().map(|j| settings.lambda.at(j)).collect();
    let empirical = !settings.clip;
    let betas: Vec<f64> = if empirical {
        steps.iter().map(|r| r.a_lmax.unwrap_or(1.0)).collect()
    } else {
        idx.map(|j| settings.beta.at(j)).collect()
    };
    let dist = IterateDistribution::from_sequences(kind, sigma2, l, &gammas, &betas, &lambdas)?;
    let indices: Vec<usize> = (0..draws).map(|_| dist.sample(rng)).collect();
    Ok(RandomizedIterates {
        kind,
        empirical_beta_weights: empirical && kind == SelectionKind::Theorem2Weighted,
        v_gap: indices.iter().map(|&i| steps[i].v_gap).collect(),
        grad_norm_sq: indices.iter().map(|&i| steps[i].grad_norm_sq).collect(),
        indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{BiasDirection, NeumannRange, OracleSpec};
    use crate::problems::{BilevelNoise, QuadraticProblem};
    use crate::rng::seeded;
    use rand_distr::{Distribution, StandardNormal};

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn quad(d: usize) -> Problem {
        Problem::Quadratic(QuadraticProblem::least_squares(d, 3).unwrap())
    }

    fn synth(noise_var: f64) -> OracleSpec {
        OracleSpec::Synthetic {
            noise_var,
            direction: BiasDirection::default(),
        }
    }

    #[test]
    fn asa_step_examples() {
        let a = DiagonalMatrix::from_slice(&[1.0 / 3.0, 0.25]).unwrap();
        let out = asa_step(&v(&[1.0, 1.0]), 0.5, &a, &v(&[3.0, 4.0])).unwrap();
        assert_eq!(out, v(&[0.5, 0.5]));
        let t = v(&[0.3, -2.0]);
        assert_eq!(asa_step(&t, 0.1, &a, &Vector::zeros(2)).unwrap(), t);
        let q = QuadraticProblem::least_squares(2, 0).unwrap();
        let g = q.gradient(&t);
        assert_eq!(
            asa_step(&t, 1.0, &DiagonalMatrix::identity(2), &g).unwrap(),
            &t - &g
        );
        assert!(asa_step(&t, 0.0, &a, &g).is_err());
        assert!(asa_step(&t, 1.0, &a, &v(&[f64::NAN, 0.0])).is_err());
        assert!(asa_step(&t, 1.0, &a, &v(&[1.0])).is_err());
    }

    #[test]
    fn identity_unbiased_equals_reference_sgd() {
        let p = quad(5);
        let gamma = PowerSchedule::decreasing(0.1, 0.5).unwrap();
        let mut settings = RunSettings::new(Vector::from_element(5, 1.0), 100, gamma);
        settings.keep_iterates = true;
        let mut oracle = Oracle::new(synth(0.04), &p, None).unwrap();
        let trace = run_asa(
            &p,
            &mut oracle,
            &PreconditionerSpec::Identity,
            &settings,
            &mut seeded(9),
        )
        .unwrap();

        // Independent loop drawing the same Gaussian stream.
        let mut rng = seeded(9);
        let mut theta = Vector::from_element(5, 1.0);
        let its = trace.iterates.as_ref().unwrap();
        for k in 0..100u64 {
            assert_eq!(&theta, &its[k as usize]);
            let mut g = p.gradient(&theta);
            for x in g.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += 0.2 * z;
            }
            let step = 0.1 / ((k + 1) as f64).sqrt();
            theta = &theta - &g * step;
        }
        assert_eq!(theta, trace.final_theta);
    }

    #[test]
    fn same_seed_same_trace() {
        let p = quad(4);
        let spec = PreconditionerSpec::Adagrad { delta: 0.05 };
        let s = RunSettings::new(
            Vector::from_element(4, 1.0),
            500,
            PowerSchedule::decreasing(0.5, 0.5).unwrap(),
        );
        let sched = PowerSchedule::decreasing(1.0, 0.25).unwrap();
        let run = || {
            let mut o = Oracle::new(synth(0.01), &p, Some(sched)).unwrap();
            run_asa(&p, &mut o, &spec, &s, &mut seeded(1)).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.records, b.records);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.write_csv(&mut ba, 1).unwrap();
        b.write_csv(&mut bb, 1).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn trace_layout_and_recomputation() {
        let p = quad(3);
        let mut s = RunSettings::new(
            Vector::from_element(3, 1.0),
            50,
            PowerSchedule::decreasing(0.3, 0.5).unwrap(),
        );
        s.keep_iterates = true;
        let mut o = Oracle::new(synth(0.01), &p, None).unwrap();
        let t = run_asa(
            &p,
            &mut o,
            &PreconditionerSpec::RmsProp {
                delta: 0.05,
                rho: 0.9,
            },
            &s,
            &mut seeded(2),
        )
        .unwrap();
        assert_eq!(t.records.len(), 51);
        for (i, r) in t.records.iter().enumerate() {
            assert_eq!(r.n, i as u64);
            let th = &t.iterates.as_ref().unwrap()[i];
            assert_eq!(r.v_gap.unwrap(), p.value(th));
            assert_eq!(r.grad_norm_sq, p.gradient(th).norm_squared());
            assert!(r.v_gap.unwrap() >= -1e-9);
        }
        assert!(t.last().unwrap().step.is_none());
        assert_eq!(t.bracket_violations, 0);
        assert_eq!(t.bracket_checks, 50);
    }

    #[test]
    fn amsgrad_momentum_and_monotone() {
        let p = quad(4);
        let spec = PreconditionerSpec::Amsgrad {
            delta: 0.05,
            rho1: 0.9,
            rho2: 0.999,
        };
        let s = RunSettings::new(
            Vector::from_element(4, 2.0),
            2000,
            PowerSchedule::decreasing(0.05, 0.5).unwrap(),
        );
        let mut o = Oracle::new(synth(0.1), &p, None).unwrap();
        let t = run_amsgrad(&p, &mut o, &spec, &s, &mut seeded(3)).unwrap();
        assert_eq!(t.monotone_violations, 0);
        assert!(t.momentum_ratio.unwrap() <= 1.0);
        let lmax: Vec<f64> = t.records.iter().filter_map(|r| r.a_lmax).collect();
        assert!(lmax.windows(2).all(|w| w[1] <= w[0]));
        let mut o = Oracle::new(synth(0.1), &p, None).unwrap();
        assert!(run_asa(&p, &mut o, &spec, &s, &mut seeded(3)).is_err());
    }

    #[test]
    fn amsgrad_degenerate_momenta() {
        // rho1 = rho2 = 0 on an identical bounded stream: A = (delta + g^2)^{-1/2} fixed,
        // each step moves by gamma g / sqrt(delta + g^2).
        let p = quad(2);
        let spec = PreconditionerSpec::Amsgrad {
            delta: 0.05,
            rho1: 0.0,
            rho2: 0.0,
        };
        let s = RunSettings::new(
            Vector::from_element(2, 1.0),
            5,
            PowerSchedule::constant(0.1).unwrap(),
        );
        let g = v(&[2.0, -1.0]);
        let gg = g.clone();
        let t = run_loop(
            &p,
            &spec,
            &s,
            |_, _, _| {
                Ok(GradientSample {
                    estimate: gg.clone(),
                    true_gradient: None,
                    bias_target: None,
                    inner_samples: 1,
                })
            },
            &mut seeded(0),
        )
        .unwrap();
        let mut theta = Vector::from_element(2, 1.0);
        for _ in 0..5 {
            theta = &theta - g.map(|x| x / (0.05 + x * x).sqrt()) * 0.1;
        }
        assert!((t.final_theta - theta).norm() < 1e-15);
    }

    #[test]
    fn clipping_bounds_reported_norm() {
        let p = quad(3);
        let mut s = RunSettings::new(
            Vector::from_element(3, 1.0),
            200,
            PowerSchedule::decreasing(0.1, 0.5).unwrap(),
        );
        s.clip = true;
        s.beta = PowerSchedule::increasing(1.5, 0.1).unwrap();
        let mut o = Oracle::new(synth(0.01), &p, None).unwrap();
        let t = run_asa(
            &p,
            &mut o,
            &PreconditionerSpec::Adagrad { delta: 0.01 },
            &s,
            &mut seeded(4),
        )
        .unwrap();
        for r in t.records.iter().filter(|r| r.step.is_some()) {
            assert!(r.a_lmax.unwrap() <= s.beta.at(r.n + 1));
        }
    }

    #[test]
    fn schedule_regularization_tracks_beta() {
        let p = quad(3);
        let mut s = RunSettings::new(
            Vector::from_element(3, 1.0),
            100,
            PowerSchedule::decreasing(0.1, 0.5).unwrap(),
        );
        s.regularization = Regularization::Schedule;
        s.beta = PowerSchedule::increasing(2.0, 0.1).unwrap();
        let mut o = Oracle::new(synth(0.01), &p, None).unwrap();
        let t = run_asa(
            &p,
            &mut o,
            &PreconditionerSpec::Adagrad { delta: 0.05 },
            &s,
            &mut seeded(5),
        )
        .unwrap();
        assert_eq!(t.bracket_violations, 0);
        for r in t.records.iter().filter(|r| r.step.is_some()) {
            assert!(r.a_lmax.unwrap() <= s.beta.at(r.n + 1));
        }
    }

    #[test]
    fn divergence_reports_partial_trace() {
        let p = quad(2);
        let mut s = RunSettings::new(
            Vector::from_element(2, 1.0),
            1000,
            PowerSchedule::constant(50.0).unwrap(),
        );
        s.divergence_cap = 1e6;
        let mut o = Oracle::new(synth(0.0), &p, None).unwrap();
        match run_asa(
            &p,
            &mut o,
            &PreconditionerSpec::Identity,
            &s,
            &mut seeded(0),
        ) {
            Err(Error::Diverged {
                iteration,
                partial,
                norm,
            }) => {
                assert!(iteration < 1000);
                assert!(norm > 1e6);
                assert_eq!(partial.records.len(), iteration + 1);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn coordinate_gauss_southwell_moves_one_coordinate() {
        let p = quad(4);
        let spec = PreconditionerSpec::Coordinate {
            rule: CoordinateRule::GaussSouthwell,
            weights: None,
        };
        let mut s = RunSettings::new(
            Vector::from_element(4, 1.0),
            1,
            PowerSchedule::constant(0.5).unwrap(),
        );
        s.keep_iterates = true;
        let mut o = Oracle::new(synth(0.0), &p, None).unwrap();
        let t = run_asa(&p, &mut o, &spec, &s, &mut seeded(0)).unwrap();
        let diff = &t.final_theta - &s.theta0;
        assert_eq!(diff.iter().filter(|x| **x != 0.0).count(), 1);
        let r = &t.records[0];
        assert_eq!((r.a_lmin, r.a_lmax), (Some(0.0), Some(1.0)));
    }

    #[test]
    fn coordinate_uniform_reports_expected_mask() {
        let p = quad(4);
        let spec = PreconditionerSpec::Coordinate {
            rule: CoordinateRule::Uniform,
            weights: None,
        };
        let s = RunSettings::new(
            Vector::from_element(4, 1.0),
            300,
            PowerSchedule::decreasing(0.5, 0.5).unwrap(),
        );
        let mut o = Oracle::new(synth(0.0), &p, None).unwrap();
        let t = run_asa(&p, &mut o, &spec, &s, &mut seeded(0)).unwrap();
        assert_eq!(t.records[0].a_lmax, Some(0.25));
        assert!(t.last().unwrap().v_gap.unwrap() < t.records[0].v_gap.unwrap());
    }

    #[test]
    fn bilevel_exact_noiseless_matches_reduced_gd() {
        let bl = BilevelProblem::quadratic_toy(1).unwrap();
        let red = bl.reduced();
        let theta0 = Vector::from_element(3, 1.0);
        let gamma = PowerSchedule::constant(0.1).unwrap();
        let mut run = RunSettings::new(theta0.clone(), 50, gamma);
        run.keep_iterates = true;
        let settings = BilevelSettings {
            run,
            precond: PreconditionerSpec::Identity,
            phi0: bl.lower_opt(&theta0),
            inner_steps: 400,
            inner_step: InnerStep::Constant { value: 0.1 },
            inverse: InverseEstimator::Exact,
        };
        let t = run_bilevel(&bl, &settings, &mut seeded(0)).unwrap();
        let mut theta = theta0;
        for it in t.iterates.as_ref().unwrap() {
            assert!((it - &theta).norm() <= 1e-6);
            theta = &theta - red.gradient(&theta) * 0.1;
        }
    }

    #[test]
    fn bilevel_runs_with_noise_and_neumann() {
        let bl = BilevelProblem::quadratic_toy(2)
            .unwrap()
            .with_noise(BilevelNoise {
                f_grad: 0.1,
                g_grad: 0.1,
                hessian: 0.05,
            });
        let theta0 = Vector::from_element(3, 1.0);
        let settings = BilevelSettings {
            run: RunSettings::new(
                theta0.clone(),
                2000,
                PowerSchedule::decreasing(0.05, 0.5).unwrap(),
            ),
            precond: PreconditionerSpec::Amsgrad {
                delta: 0.05,
                rho1: 0.9,
                rho2: 0.999,
            },
            phi0: Vector::zeros(4),
            inner_steps: 5,
            inner_step: InnerStep::Schedule { coeff: 1.0 },
            inverse: InverseEstimator::Neumann {
                n: 10,
                range: NeumannRange::OneToN,
            },
        };
        let t = run_bilevel(&bl, &settings, &mut seeded(1)).unwrap();
        assert!(t.last().unwrap().v_gap.unwrap() < t.records[0].v_gap.unwrap());
        assert!(t.records.iter().all(|r| r.v_gap.unwrap() >= -1e-9));
        assert_eq!(t.monotone_violations, 0);
    }

    #[test]
    fn inner_schedule_formula() {
        let s = InnerStep::Schedule { coeff: 2.0 };
        assert_eq!(s.at(4, 5), 2.0 / 2.0 / 5.0);
        assert_eq!(s.at(1, 0), 2.0);
    }

    #[test]
    fn randomized_iterates_flags_empirical_beta() {
        let p = quad(3);
        let s = RunSettings::new(
            Vector::from_element(3, 1.0),
            100,
            PowerSchedule::decreasing(0.1, 0.5).unwrap(),
        );
        let mut o = Oracle::new(synth(0.01), &p, None).unwrap();
        let t = run_asa(
            &p,
            &mut o,
            &PreconditionerSpec::Adagrad { delta: 0.05 },
            &s,
            &mut seeded(0),
        )
        .unwrap();
        let mut rng = seeded(1);
        let r = randomized_iterates(
            &t,
            &s,
            SelectionKind::Theorem2Weighted,
            1.0,
            1.0,
            10,
            &mut rng,
        )
        .unwrap();
        assert!(r.empirical_beta_weights);
        assert!(r.indices.iter().all(|i| *i < 100));
        let r =
            randomized_iterates(&t, &s, SelectionKind::Uniform, 0.0, 1.0, 10, &mut rng).unwrap();
        assert!(!r.empirical_beta_weights);
    }
}
