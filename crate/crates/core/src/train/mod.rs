//! Adam with weight decay, the polynomial learning-rate schedule, the
//! epoch loop, evaluation and checkpoints.

mod adam;
pub mod checkpoint;
mod config;
mod fit;
mod schedule;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::TrainConfig;
pub use fit::{evaluate, predict_samples, stack, train_epochs, train_until, EpochRecord, History, Hooks};
pub use schedule::poly_lr;

use crate::model::ArtSeg;
use crate::tensor::Scalar;

/// Everything besides the model needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub adam: AdamState<T>,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: &ArtSeg<T>) -> Self {
        TrainState {
            adam: AdamState::new(model.store()),
            epoch: 0,
        }
    }
}
