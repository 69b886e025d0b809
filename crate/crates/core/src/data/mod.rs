//! Dataset directories, loading and augmentation, the synthetic scene
//! generator and prediction rendering.

mod dataset;
mod palette;
mod render;
mod synth;

pub use dataset::{
    flip_rows, hflip, read_image, resize_image, resize_labels, scan_dataset, Dataset, Sample, Split,
};
pub use palette::Palette;
pub use render::{render_prediction, write_prediction};
pub use synth::{intensity_band, synth_generate, SynthConfig, NOISE_SIGMA};
