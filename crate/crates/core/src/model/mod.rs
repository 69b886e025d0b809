//! The network: configuration, parameter storage, layers and wiring.

mod artseg;
mod config;
pub mod layers;
mod params;

pub use artseg::{argmax_classes, ArtSeg, DecoderStage, Forward};
pub use config::ArtSegConfig;
pub use params::{Binding, Buffer, BufferId, Init, Param, ParamId, ParamStore};
