//! Experiment orchestration shared by the command-line tool and the Python
//! bindings: configuration, verification suites and sweeps.

pub mod config;
pub mod fit;
pub mod sweep;
pub mod verify;

pub use config::{parse_policy, RunConfig};
pub use fit::{log_log_fit, ols, LinearFit};
pub use sweep::{run_sweep, OutputRecord, SweepResult, SweepSpec};
pub use verify::{run_suite, Suite, VerifyOptions, VerifyReport};
