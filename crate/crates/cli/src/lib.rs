//! Experiment runner for the phagocyte library: config parsing, preset
//! expansion, parallel execution and plot data.

pub mod config;
pub mod figures;
pub mod plan;
pub mod run;

pub use config::{parse_config, ConfigError, ExperimentConfig, Preset, TraceRef};
pub use plan::{expand, Cell, CellKind};
pub use run::{run, Report};
