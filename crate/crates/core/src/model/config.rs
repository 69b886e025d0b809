use crate::autodiff::BatchNormConfig;
use crate::error::{Error, Result};

/// Channel plan and structural switches defining one concrete network.
///
/// Channel counts are given at full width and scaled by
/// `width_multiplier` (rounded, never below 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ArtSegConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    /// Output channels of the four encoder blocks, shallowest first.
    pub encoder_channels: [usize; 4],
    pub bottleneck_channels: usize,
    /// Output channels of the four decoder stages, deepest first. Each
    /// stage's up-block also emits this many channels.
    pub decoder_channels: [usize; 4],
    pub pool_kernels: [usize; 4],
    pub recurrence_steps: usize,
    pub units_per_block: usize,
    pub width_multiplier: f64,
    /// Whether the bottleneck block adds its input back (off: plain
    /// recurrent stack).
    pub bottleneck_residual: bool,
    pub batch_norm: BatchNormConfig,
}

impl Default for ArtSegConfig {
    fn default() -> Self {
        ArtSegConfig {
            in_channels: 1,
            num_classes: 9,
            encoder_channels: [32, 64, 128, 256],
            bottleneck_channels: 256,
            decoder_channels: [128, 128, 64, 32],
            pool_kernels: [2, 2, 2, 4],
            recurrence_steps: 2,
            units_per_block: 2,
            width_multiplier: 1.0,
            bottleneck_residual: false,
            batch_norm: BatchNormConfig::default(),
        }
    }
}

impl ArtSegConfig {
    pub fn with_width(mut self, width: f64) -> Self {
        self.width_multiplier = width;
        self
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.num_classes = classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.in_channels == 0 {
            return bad("in_channels must be at least 1".into());
        }
        if !(2..=256).contains(&self.num_classes) {
            return bad(format!("num_classes must be in 2..=256, got {}", self.num_classes));
        }
        if self.recurrence_steps == 0 {
            return bad("recurrence_steps must be at least 1".into());
        }
        if self.units_per_block == 0 {
            return bad("units_per_block must be at least 1".into());
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier.is_finite()) {
            return bad(format!("width multiplier must be positive, got {}", self.width_multiplier));
        }
        if self.pool_kernels.iter().any(|&k| k == 0) {
            return bad(format!("pool kernels must be positive, got {:?}", self.pool_kernels));
        }
        let channels = self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain(std::iter::once(&self.bottleneck_channels));
        if channels.into_iter().any(|&c| c == 0) {
            return bad("channel counts must be positive".into());
        }
        if !(self.batch_norm.eps > 0.0) || !(0.0..=1.0).contains(&self.batch_norm.momentum) {
            return bad(format!("invalid batch-norm settings {:?}", self.batch_norm));
        }
        Ok(())
    }

    /// Applies the width multiplier to a full-width channel count.
    pub fn scaled(&self, channels: usize) -> usize {
        ((channels as f64 * self.width_multiplier).round() as usize).max(1)
    }

    /// Product of the pool kernels; input sides must be multiples of it.
    pub fn downsample_factor(&self) -> usize {
        self.pool_kernels.iter().product()
    }

    pub fn check_input_size(&self, h: usize, w: usize) -> Result<()> {
        let f = self.downsample_factor();
        if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::Config(format!(
                "input size {h}×{w} must be a positive multiple of {f} (product of pool kernels)"
            )));
        }
        Ok(())
    }
}
