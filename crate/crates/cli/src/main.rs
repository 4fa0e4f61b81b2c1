use std::path::PathBuf;
use std::process::ExitCode;

use biasa::analysis::fit_loglog_slope;
use biasa::driver::{series, Trace};
use biasa::experiment::{parse_config, run_experiment, ExperimentConfig};
use biasa::problems::{verify_assumptions, AssumptionReport, Objective};
use biasa::rng::seeded;
use biasa::schedules::classify_rate_regime;
use biasa::Error;
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_BAND: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const CHECK_PROBES: usize = 1000;

#[derive(Parser)]
#[command(
    name = "biasa",
    version,
    about = "Biased adaptive stochastic approximation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (optimizer, bias, seed) combination of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Validate a config and probe the problem's declared constants.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit log-log slopes to trace CSVs.
    Slopes {
        /// Glob pattern, e.g. `out/*.csv`.
        #[arg(long)]
        traces: String,
        /// `<lo>:<hi>` in iterations.
        #[arg(long, value_parser = parse_window)]
        window: (f64, f64),
        #[arg(long, value_enum, default_value_t = Metric::Grad)]
        metric: Metric,
        /// `<min>:<max>`; any slope outside it gives exit code 1.
        #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
        band: Option<(f64, f64)>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Grad,
    VGap,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected <lo>:<hi>")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    if lo >= hi {
        return Err(format!("{lo} is not below {hi}"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, jobs } => cmd_run(config, out, jobs),
        Command::Check { config } => cmd_check(config),
        Command::Slopes {
            traces,
            window,
            metric,
            band,
        } => cmd_slopes(&traces, window, metric, band),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn cmd_run(config: PathBuf, out: Option<PathBuf>, jobs: Option<usize>) -> Result<u8, Error> {
    let cfg = parse_config(&config)?;
    let out = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let summary = run_experiment(&cfg, &out, jobs)?;
    println!("config {} -> {}", summary.config_hash, out.display());
    for g in &summary.groups {
        let slope = g
            .mean_slope
            .map(|f| format!("{:+.3} (se {:.3})", f.slope, f.stderr))
            .unwrap_or_else(|| "n/a".into());
        let band = match g.band_pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "-",
        };
        println!(
            "{:<10} {:<16} runs {:>2} diverged {:>2} slope {slope:<22} {band}",
            g.optimizer, g.bias, g.runs, g.diverged_runs
        );
        if let Some(note) = &g.band_note {
            println!("    note: {note}");
        }
    }
    Ok(if summary.pass { 0 } else { EXIT_BAND })
}

fn check_report(cfg: &ExperimentConfig) -> Result<AssumptionReport, Error> {
    let mut rng = seeded(cfg.seeds[0]);
    if let Some(p) = cfg.problem.build()? {
        return verify_assumptions(&p, CHECK_PROBES, &mut rng);
    }
    let bl = cfg.problem.build_bilevel()?.expect("bilevel problem");
    let reduced = bl.reduced();
    verify_assumptions(&reduced, CHECK_PROBES, &mut rng)
}

fn cmd_check(config: PathBuf) -> Result<u8, Error> {
    let cfg = parse_config(&config)?;
    println!(
        "config {} ok ({} runs)",
        cfg.hash(),
        cfg.optimizers.len() * cfg.biases.len() * cfg.seeds.len()
    );
    let s = &cfg.schedules;
    for b in &cfg.biases {
        match classify_rate_regime(s.gamma.exponent, s.beta.exponent, s.lambda.exponent, b.r()) {
            Ok(r) => println!(
                "bias {:<16} predicted slope {:+.4}{}",
                b.label(),
                r.dominant_exponent(),
                if r.dominant_has_log() {
                    " with log factor"
                } else {
                    ""
                }
            ),
            Err(e) => println!("bias {:<16} {e}", b.label()),
        }
    }
    let report = check_report(&cfg)?;
    let dim = match cfg.problem.build()? {
        Some(p) => p.dim(),
        None => cfg.problem.dim(),
    };
    println!("problem {} (d = {dim})", cfg.problem_kind());
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?
    );
    Ok(if report.pass { 0 } else { EXIT_BAND })
}

fn cmd_slopes(
    pattern: &str,
    window: (f64, f64),
    metric: Metric,
    band: Option<(f64, f64)>,
) -> Result<u8, Error> {
    let paths = glob::glob(pattern).map_err(|e| Error::Config(format!("bad glob: {e}")))?;
    let mut code = 0;
    let mut seen = 0;
    for entry in paths {
        let path = entry.map_err(|e| Error::Config(e.to_string()))?;
        if path.extension().and_then(|e| e.to_str()) != Some("csv")
            || path.to_string_lossy().ends_with("_plot.csv")
        {
            continue;
        }
        seen += 1;
        let records = Trace::load_csv(&path)?;
        let pts = match metric {
            Metric::Grad => series(&records, |r| Some(r.grad_norm_sq)),
            Metric::VGap => series(&records, |r| r.v_gap),
        };
        match fit_loglog_slope(&pts, window) {
            Ok(f) => {
                let ok = band.is_none_or(|(lo, hi)| f.slope >= lo && f.slope <= hi);
                if !ok {
                    code = EXIT_BAND;
                }
                println!(
                    "{} slope {:+.4} se {:.4} r2 {:.4} points {}{}",
                    path.display(),
                    f.slope,
                    f.stderr,
                    f.r_squared,
                    f.points,
                    if band.is_some() {
                        if ok {
                            " PASS"
                        } else {
                            " FAIL"
                        }
                    } else {
                        ""
                    }
                );
            }
            Err(e) => {
                code = EXIT_BAND;
                println!("{} no fit: {e}", path.display());
            }
        }
    }
    if seen == 0 {
        return Err(Error::Config(format!("no trace files match {pattern}")));
    }
    Ok(code)
}
