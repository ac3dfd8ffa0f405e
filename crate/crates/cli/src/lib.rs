//! Batch driver for the q-difference-differential pipeline: problem files,
//! command dispatch and result tables.

pub mod error;
pub mod output;
pub mod problem;
pub mod run;

pub use error::CliError;
pub use output::Format;
pub use problem::{load_problem, parse_problem, LoadedProblem};
pub use run::{run, Command, RunConfig};
