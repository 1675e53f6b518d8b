//! UNetMamba: a UNet-shaped segmentation network whose decoder is built from
//! visual state-space blocks, together with the tensor library, selective-scan
//! kernels, losses, metrics, data handling and training loop it needs.
//!
//! Everything numeric is generic over [`Scalar`]; the `*32` aliases below are
//! the types the trainer and CLI actually run with.

pub mod data;
pub mod error;
pub mod init;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod sscan;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::SeedStream;
pub use scalar::Scalar;
pub use tensor::{no_grad, Gradients, Tape, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
