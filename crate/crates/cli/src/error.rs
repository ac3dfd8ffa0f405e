use thiserror::Error;

/// Failures of the command-line driver. Every variant maps to exit code 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {msg}")]
    Parse { path: String, line: usize, column: usize, msg: String },

    #[error("field `{field}`: {msg}")]
    Field { field: String, msg: String },

    #[error("override `{key}`: {msg}")]
    Override { key: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("bad argument {arg}: {msg}")]
    Argument { arg: String, msg: String },

    #[error(transparent)]
    Core(#[from] qdde_core::Error),
}
