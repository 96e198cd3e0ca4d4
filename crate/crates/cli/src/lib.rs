//! Configuration, orchestration and output of simulation runs.

pub mod compare;
pub mod config;
pub mod runner;

pub use compare::{compare, ComparisonReport, CompareError};
pub use config::{parse_config, ConfigError, RunConfig};
pub use runner::{estimate_cost, run, simulate, write_outputs, Mode, Solver, SolverRun};
