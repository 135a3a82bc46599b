//! Experiment harness for `dexp-core`: resolved specs, CSV output, rate
//! fits and batch execution. The `dexp` binary is a thin layer over this crate.

pub mod config;
pub mod csvout;
pub mod error;
pub mod experiment;
pub mod rates;
pub mod spec;

pub use config::Settings;
pub use error::{BenchError, Result};
pub use experiment::{run_and_write, run_batch, run_experiment, Outcome, Summary};
pub use rates::{fit_rate_slope, RateFit};
pub use spec::{ExperimentSpec, SolverKind};
