//! BRU-net: dilated residual blocks in an asymmetric U-shape for retinal
//! layer segmentation of OCT Bscans, plus the baseline U-net, the training
//! protocol, a synthetic layered-image generator and the evaluation metrics.
//!
//! Everything runs on a small CPU tensor engine ([`tensor`], [`ops`],
//! [`graph`]) with exact reverse-mode gradients.

pub mod arch;
mod bytes;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Mode, Op, ParamId};
pub use tensor::{Scalar, Tensor};
