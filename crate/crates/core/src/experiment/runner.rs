use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{BandMetric, BiasSetting, ExperimentConfig};
use super::plot::{aggregate, emit_plot_data, PlotRow, Reduction};
use crate::analysis::{
    bound_curve, default_window, fit_loglog_slope, log_grid, BoundKind, SlopeFit, TheoreticalBound,
};
use crate::driver::{
    randomized_iterates, run_bilevel, run_single, BilevelSettings, PreconditionerSpec, RunSettings,
    Trace, TraceRecord,
};
use crate::oracles::Oracle;
use crate::problems::Objective;
use crate::rng::{run_seed, seeded};
use crate::schedules::{classify_rate_regime, RateRegime};
use crate::{Error, Result};

const KEPT_ROWS: usize = 500;

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub optimizer: String,
    pub bias: String,
    pub seed: u64,
    pub run_index: u64,
    pub run_seed: u64,
    pub config_hash: String,
    pub trace_file: String,
    pub diverged: Option<DivergenceInfo>,
    pub final_v_gap: Option<f64>,
    pub final_grad_norm_sq: f64,
    pub final_theta: Vec<f64>,
    pub best_n: u64,
    pub best_theta: Vec<f64>,
    pub grad_slope: Option<SlopeFit>,
    pub v_gap_slope: Option<SlopeFit>,
    pub bracket_checks: usize,
    pub bracket_violations: usize,
    pub monotone_violations: usize,
    pub step_cap_warnings: usize,
    pub momentum_ratio: Option<f64>,
    pub r_samples: Vec<usize>,
    pub r_sample_grad_norm_sq: Vec<f64>,
    pub empirical_beta_weights: bool,
    pub wall_time_secs: f64,
    #[serde(skip)]
    kept: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceInfo {
    pub iteration: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub optimizer: String,
    pub bias: String,
    pub regime: Option<RateRegime>,
    pub runs: usize,
    pub diverged_runs: usize,
    pub plot_file: Option<String>,
    /// Fit on the seed-mean curve of the band metric (or `grad_norm_sq` without a band).
    pub mean_slope: Option<SlopeFit>,
    pub band_pass: Option<bool>,
    pub band_note: Option<String>,
    pub bound_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunSummary>,
    pub groups: Vec<GroupSummary>,
    /// Every configured band passed (true when no band is configured).
    pub pass: bool,
}

fn labels(specs: &[PreconditionerSpec]) -> Vec<String> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if specs.iter().filter(|t| t.name() == s.name()).count() > 1 {
                format!("{}{i}", s.name())
            } else {
                s.name().to_string()
            }
        })
        .collect()
}

/// The rows retained in memory: `n = 0` plus a log grid up to the last iteration.
fn keep_grid(records: &[TraceRecord]) -> Vec<TraceRecord> {
    let Some(last) = records.last() else {
        return Vec::new();
    };
    let mut grid = log_grid(1, last.n.max(1), KEPT_ROWS - 1);
    grid.insert(0, 0);
    grid.dedup();
    records
        .iter()
        .filter(|r| grid.binary_search(&r.n).is_ok())
        .cloned()
        .collect()
}

/// Run the full grid, writing trace CSVs, per-group plot data and a summary JSON into `out`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    jobs: Option<usize>,
) -> Result<ExperimentSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let hash = cfg.hash();
    let problem = cfg.problem.build()?;
    let bilevel = cfg.problem.build_bilevel()?;
    let opt_labels = labels(&cfg.optimizers);

    let mut keys = Vec::new();
    for (oi, _) in cfg.optimizers.iter().enumerate() {
        for (bi, _) in cfg.biases.iter().enumerate() {
            for &seed in &cfg.seeds {
                keys.push((oi, bi, seed));
            }
        }
    }
    keys.sort();

    let settings = RunSettings {
        theta0: cfg.theta0_vector(),
        iterations: cfg.iterations,
        gamma: cfg.schedules.gamma,
        beta: cfg.schedules.beta,
        lambda: cfg.schedules.lambda,
        clip: cfg.clip,
        regularization: cfg.regularization,
        divergence_cap: cfg.divergence_cap,
        keep_iterates: false,
        sigma1: cfg.sigma1,
    };
    let threads = jobs.or(cfg.jobs).unwrap_or(cfg.seeds.len()).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let n_bias = cfg.biases.len() as u64;
    let one_run = |&(oi, bi, seed): &(usize, usize, u64)| -> Result<RunSummary> {
        let spec = &cfg.optimizers[oi];
        let bias: &BiasSetting = &cfg.biases[bi];
        let run_index = oi as u64 * n_bias + bi as u64;
        let rs = run_seed(seed, run_index);
        let mut rng = seeded(rs);
        let (result, l) = if let Some(bl) = &bilevel {
            let b = cfg.bilevel.unwrap_or_default();
            let s = BilevelSettings {
                run: settings.clone(),
                precond: spec.clone(),
                phi0: crate::Vector::zeros(bl.phi_dim()),
                inner_steps: b.inner_steps,
                inner_step: b.inner_step,
                inverse: b.inverse,
            };
            (run_bilevel(bl, &s, &mut rng), bl.reduced().smoothness())
        } else {
            let p = problem.as_ref().expect("single-level problem");
            let oracle_spec = cfg.oracle.clone().expect("validated");
            let mut oracle = Oracle::new(oracle_spec, p, bias.schedule())?;
            (
                run_single(p, &mut oracle, spec, &settings, &mut rng),
                p.smoothness(),
            )
        };
        let (mut trace, diverged) = match result {
            Ok(t) => (t, None),
            Err(Error::Diverged {
                iteration,
                norm,
                partial,
            }) => (*partial, Some(DivergenceInfo { iteration, norm })),
            Err(e) => return Err(e),
        };
        trace.meta.seed = seed;
        trace.meta.config_hash = hash.clone();
        let file = format!("{hash}_{}_{}_{seed}.csv", opt_labels[oi], bias.label());
        trace.save_csv(&out.join(&file), cfg.trace_stride)?;
        Ok(summarize(
            cfg,
            &trace,
            &settings,
            l,
            diverged,
            file,
            &hash,
            &opt_labels[oi],
            bias,
            seed,
            run_index,
            rs,
        ))
    };
    let runs: Vec<RunSummary> = pool.install(|| {
        use rayon::prelude::*;
        keys.par_iter().map(one_run).collect::<Result<Vec<_>>>()
    })?;

    let mut groups = Vec::new();
    for (oi, spec) in cfg.optimizers.iter().enumerate() {
        for bias in &cfg.biases {
            let members: Vec<&RunSummary> = runs
                .iter()
                .filter(|r| r.optimizer == opt_labels[oi] && r.bias == bias.label())
                .collect();
            groups.push(group_summary(
                cfg,
                &hash,
                out,
                spec,
                &opt_labels[oi],
                bias,
                &members,
            )?);
        }
    }
    let pass = groups.iter().all(|g| g.band_pass != Some(false));
    let summary = ExperimentSummary {
        config_hash: hash.clone(),
        config: cfg.clone(),
        runs,
        groups,
        pass,
    };
    let path = out.join(format!("{hash}_summary.json"));
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

#[allow(clippy::too_many_arguments)]
fn summarize(
    cfg: &ExperimentConfig,
    trace: &Trace,
    settings: &RunSettings,
    l: f64,
    diverged: Option<DivergenceInfo>,
    trace_file: String,
    hash: &str,
    optimizer: &str,
    bias: &BiasSetting,
    seed: u64,
    run_index: u64,
    rs: u64,
) -> RunSummary {
    let last = trace.records.last().cloned();
    let window = default_window(cfg.iterations as u64);
    let grad_slope = fit_loglog_slope(&trace.grad_series(), window).ok();
    let v_gap_slope = fit_loglog_slope(&trace.v_gap_series(), window).ok();
    let (r_samples, r_grad, empirical) = if diverged.is_none() {
        let mut rng = seeded(rs ^ 0x5eed);
        match randomized_iterates(
            trace,
            settings,
            cfg.selection,
            cfg.sigma2,
            l,
            cfg.r_draws,
            &mut rng,
        ) {
            Ok(r) => (r.indices, r.grad_norm_sq, r.empirical_beta_weights),
            Err(_) => (Vec::new(), Vec::new(), false),
        }
    } else {
        (Vec::new(), Vec::new(), false)
    };
    RunSummary {
        optimizer: optimizer.to_string(),
        bias: bias.label(),
        seed,
        run_index,
        run_seed: rs,
        config_hash: hash.to_string(),
        trace_file,
        final_v_gap: last.as_ref().and_then(|r| r.v_gap),
        final_grad_norm_sq: last.as_ref().map(|r| r.grad_norm_sq).unwrap_or(f64::NAN),
        final_theta: trace.final_theta.iter().copied().collect(),
        best_n: trace.best_n,
        best_theta: trace.best_theta.iter().copied().collect(),
        diverged,
        grad_slope,
        v_gap_slope,
        bracket_checks: trace.bracket_checks,
        bracket_violations: trace.bracket_violations,
        monotone_violations: trace.monotone_violations,
        step_cap_warnings: trace.step_cap_warnings,
        momentum_ratio: trace.momentum_ratio,
        r_samples,
        r_sample_grad_norm_sq: r_grad,
        empirical_beta_weights: empirical,
        wall_time_secs: trace.meta.wall_time_secs,
        kept: keep_grid(&trace.records),
    }
}

fn group_summary(
    cfg: &ExperimentConfig,
    hash: &str,
    out: &Path,
    spec: &PreconditionerSpec,
    optimizer: &str,
    bias: &BiasSetting,
    members: &[&RunSummary],
) -> Result<GroupSummary> {
    let s = &cfg.schedules;
    let regime = classify_rate_regime(
        s.gamma.exponent,
        s.beta.exponent,
        s.lambda.exponent,
        bias.r(),
    )
    .ok();
    let ok: Vec<&[TraceRecord]> = members
        .iter()
        .filter(|r| r.diverged.is_none())
        .map(|r| r.kept.as_slice())
        .collect();
    let mut group = GroupSummary {
        optimizer: optimizer.to_string(),
        bias: bias.label(),
        regime,
        runs: members.len(),
        diverged_runs: members.len() - ok.len(),
        plot_file: None,
        mean_slope: None,
        band_pass: None,
        band_note: None,
        bound_curve: Vec::new(),
    };
    let rows: Option<Vec<PlotRow>> = if ok.is_empty() {
        None
    } else {
        let file = format!("{hash}_{optimizer}_{}_plot.csv", bias.label());
        emit_plot_data(&ok, Reduction::Mean, &PathBuf::from(out).join(&file))?;
        group.plot_file = Some(file);
        Some(aggregate(&ok, Reduction::Mean)?)
    };
    let metric = cfg.band.map(|b| b.metric).unwrap_or(BandMetric::GradNormSq);
    let window = cfg
        .band
        .and_then(|b| b.window)
        .unwrap_or_else(|| default_window(cfg.iterations as u64));
    if let Some(rows) = &rows {
        let series: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| match metric {
                BandMetric::GradNormSq => Some((r.n as f64, r.grad.0)),
                BandMetric::VGap => r.v_gap.map(|v| (r.n as f64, v.0)),
            })
            .collect();
        match fit_loglog_slope(&series, window) {
            Ok(fit) => group.mean_slope = Some(fit),
            Err(e) => group.band_note = Some(e.to_string()),
        }
        let kind = match spec {
            PreconditionerSpec::Amsgrad { .. } => BoundKind::AmsgradRate,
            _ => BoundKind::NonconvexRate,
        };
        let bound = TheoreticalBound::new(
            kind,
            s.gamma.exponent,
            s.beta.exponent,
            s.lambda.exponent,
            bias.r(),
        );
        if let Some(&(n0, y0)) = series.iter().find(|(n, _)| *n >= window.0) {
            let grid: Vec<f64> = log_grid(n0.max(1.0) as u64, window.1 as u64, 20)
                .into_iter()
                .map(|n| n as f64)
                .collect();
            if y0 > 0.0 {
                group.bound_curve =
                    bound_curve(&bound, &grid, Some((n0.max(1.0), y0))).unwrap_or_default();
            }
        }
    } else {
        group.band_note = Some("every run diverged".into());
    }
    if let Some(band) = cfg.band {
        group.band_pass = Some(match (&group.mean_slope, group.diverged_runs) {
            (Some(f), 0) => f.slope >= band.slope_min && f.slope <= band.slope_max,
            _ => false,
        });
    }
    Ok(group)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::parse_config_str;

    const GRID: &str = r#"
iterations = 2000
seeds = [1, 2]
biases = ["unbiased", { coeff = 1.0, exponent = 0.0 }]
optimizers = [{ kind = "adagrad" }, { kind = "amsgrad" }]
trace_stride = 10

[problem]
kind = "quadratic"
d = 4

[oracle]
kind = "synthetic"

[schedules]
gamma = { coeff = 0.5, exponent = 0.5 }

[band]
metric = "grad_norm_sq"
slope_min = -5.0
slope_max = 5.0
"#;

    #[test]
    fn grid_artifacts_and_determinism() {
        let cfg = parse_config_str(GRID).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = run_experiment(&cfg, d1.path(), Some(3)).unwrap();
        let b = run_experiment(&cfg, d2.path(), Some(1)).unwrap();
        assert_eq!(a.runs.len(), 8);
        assert_eq!(a.groups.len(), 4);
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            let fa = std::fs::read(d1.path().join(&ra.trace_file)).unwrap();
            let fb = std::fs::read(d2.path().join(&rb.trace_file)).unwrap();
            assert_eq!(fa, fb);
            let recs = Trace::read_csv(fa.as_slice()).unwrap();
            assert_eq!(recs.last().unwrap().v_gap, ra.final_v_gap);
            assert_eq!(recs.last().unwrap().n, 2000);
        }
        let seeds: std::collections::HashSet<u64> = a.runs.iter().map(|r| r.run_seed).collect();
        assert_eq!(seeds.len(), 8);
        assert!(a.pass);
        assert!(d1
            .path()
            .join(format!("{}_summary.json", a.config_hash))
            .exists());
    }

    #[test]
    fn divergence_is_recorded_not_fatal() {
        let text = GRID
            .replace(
                "coeff = 0.5, exponent = 0.5",
                "coeff = 1000.0, exponent = 0.0",
            )
            .replace(
                "optimizers = [{ kind = \"adagrad\" }, { kind = \"amsgrad\" }]",
                "optimizers = [{ kind = \"identity\" }]",
            );
        let mut cfg = parse_config_str(&text).unwrap();
        cfg.divergence_cap = 1e6;
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&cfg, dir.path(), None).unwrap();
        assert!(s.runs.iter().all(|r| r.diverged.is_some()));
        assert!(!s.pass);
    }
}
