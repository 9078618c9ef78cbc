//! Simulation harness: TOML run configurations, Monte-Carlo sweeps, dataset
//! export, exact throughput and the statistics used to report results.

pub mod config;
pub mod dataset;
pub mod sim;
pub mod stats;
pub mod throughput;
pub mod train;

pub use config::RunConfig;
pub use sim::{PointResult, Simulator, SweepRow};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] sipsim_core::Error),
    #[error(transparent)]
    Neural(#[from] sipsim_neural::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Whether a core error reflects a numerical breakdown rather than bad input.
pub fn is_numerical(e: &sipsim_core::Error) -> bool {
    use sipsim_core::Error as E;
    match e {
        E::NonFinite | E::Numerical(_) | E::DegenerateChannel(_) => true,
        E::Backend { source, .. } => is_numerical(source),
        _ => false,
    }
}

impl Error {
    /// Process exit code for the command-line tool: 3 for numerical failures
    /// during a run, 2 for everything caused by inputs (config, files,
    /// checkpoints).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if is_numerical(e) => 3,
            Error::Neural(sipsim_neural::Error::Diverged { .. }) => 3,
            Error::Neural(sipsim_neural::Error::Core(e)) if is_numerical(e) => 3,
            _ => 2,
        }
    }
}
