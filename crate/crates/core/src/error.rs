use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("query x = {x} outside terrain extent [0, {extent}]")]
    OffTerrain { x: f64, extent: f64 },

    #[error("simulation diverged at control step {step}")]
    Diverged { step: usize },

    #[error("dynamics linearization failed at step {step}")]
    LinearizationFailed { step: usize },

    #[error("backward pass lost positive definiteness at step {step} (mu = {mu:e})")]
    RegularizationFailed { step: usize, mu: f64 },

    #[error("scripted demonstration fell after {steps} steps")]
    DemoFailed { steps: usize },

    #[error("ilqg failed on terrain {terrain}: {source}")]
    TerrainOptimization {
        terrain: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {what} at line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            msg: msg.into(),
        }
    }
}
