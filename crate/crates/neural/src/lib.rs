//! Convolutional channel-estimation and detection networks for the
//! superimposed-pilot receiver, with hand-written backward passes, Adam and
//! an unrolled training loop over the interference-cancellation engine.
//!
//! Tensors are real NHWC plane stacks ([`Planes`]); complex quantities are
//! split into `(re, im)` channel pairs. The batch dimension carries one
//! instance per layer, so the same weights serve any layer count.

pub mod adam;
pub mod checkpoint;
pub mod features;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod resnet;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use adam::Adam;
pub use model::{NeuralCe, NeuralDd, ReceiverNets, ModelConfig};
pub use resnet::{Grads, NetSpec, ResNet};
pub use scalar::Scalar;
pub use tensor::Planes;
pub use train::{TrainConfig, TrainLogRecord, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Core(#[from] sipsim_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<Error> for sipsim_core::Error {
    fn from(e: Error) -> Self {
        match e {
            Error::Core(inner) => inner,
            Error::Shape(msg) => sipsim_core::Error::DimensionMismatch(msg),
            other => sipsim_core::Error::Numerical(other.to_string()),
        }
    }
}
