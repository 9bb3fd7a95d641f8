//! CLI experiment driver: config parsing, the Monte Carlo experiment loop,
//! and plot-ready CSV emission.

mod config;
mod experiment;
mod output;

pub use config::{
    BandwidthSetting, ConfigError, ExperimentConfig, FilterSpec, GridConfig, ModelConfig,
    NamedBandwidth, OutputConfig, ScheduleSetting, SvgdSettings,
};
pub use experiment::{
    run_experiment, run_single, BackendRun, DensitySnapshot, ExperimentResults, HarnessError,
    SingleRun, SummaryRow,
};
pub use output::{emit_figure_data, write_outputs, Figure};
