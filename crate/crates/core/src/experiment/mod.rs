//! Config-driven experiments: parse, fan out runs, write traces and summaries.

mod config;
mod plot;
mod runner;

pub use config::{
    parse_config, parse_config_str, AcceptanceBand, BandMetric, BiasSetting, BilevelRunConfig,
    ExperimentConfig, ProblemConfig, ScheduleConfig,
};
pub use plot::{aggregate, emit_plot_data, write_plot_data, PlotRow, Reduction, MAX_PLOT_ROWS};
pub use runner::{run_experiment, ExperimentSummary, GroupSummary, RunSummary};
