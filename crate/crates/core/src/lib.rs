//! Masked convolutional autoencoder for visual image encryption and
//! lossy 3x compression.
//!
//! The pipeline: plain image bytes are XOR-combined with a keyed byte mask
//! (the shared secret), a small convolutional encoder maps the masked image
//! into a quantized byte latent (the transmitted "cipher image", 1024 bytes
//! for 32x32 RGB inputs and 784 bytes for 28x28 grayscale), and a decoder
//! reconstructs the plain image on the receiver side. Training, evaluation,
//! and the statistical analysis of the scheme live here too; the `maskae`
//! binary wires it all into a CLI.

#![forbid(unsafe_code)]

pub mod autograd;
pub mod data;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{kaiming_init, Shape, Tensor};
