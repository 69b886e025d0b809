//! ARTSeg: an attention-gated recurrent-residual encoder-decoder for
//! single-channel thermal image segmentation, together with the tensor
//! engine, training loop and metrics it needs.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use model::{ArtSeg, ArtSegConfig};
pub use tensor::{Precision, Scalar, Tensor};
