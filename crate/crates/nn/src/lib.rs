//! CPU tensor engine with hand-written backward passes and the
//! encoder-decoder sound-speed regression network.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use loss::l2_loss;
pub use network::{Network, NetworkConfig, Variant};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{Scalar, Tensor};
