//! Link-level building blocks for fixed superimposed-pilot (F-SIP) MIMO-OFDM
//! transmission: resource grids, LDPC/CRC coding, QAM mapping, DFT
//! orthogonal-mask pilots, fading channels, the DMRS/LMMSE baseline and the
//! iterative interference-cancellation receiver.

pub mod channel;
pub mod classic;
pub mod fec;
pub mod grid;
pub mod ic;
pub mod link;
pub mod mcs;
pub mod modem;
pub mod pilot;

pub use grid::{
    grid_power, hadamard_apply, snr_to_noise_variance, ChannelTensor, GridDims, LayerChannel,
    MultiLayerGrid, ResourceGrid, RxTensor, C64,
};
pub use mcs::{McsEntry, McsTable};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in tensor")]
    NonFinite,
    #[error("unknown MCS index {0}")]
    UnknownMcs(u32),
    #[error("could not construct a full-rank LDPC code with n={n}, k={k}")]
    CodeConstruction { n: usize, k: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("receiver backend failed at iteration {iteration}, layer {layer}: {source}")]
    Backend {
        iteration: usize,
        layer: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
