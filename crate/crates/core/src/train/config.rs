use crate::error::{Error, Result};

/// Optimizer, schedule and loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub adam_betas: (f64, f64),
    pub total_epochs: usize,
    pub poly_power: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs; 0 disables periodic saves.
    pub checkpoint_interval: usize,
    /// Apply weight decay directly to the parameters (AdamW style)
    /// instead of adding it to the gradient.
    pub decoupled_weight_decay: bool,
    /// Random horizontal flips with probability 0.5.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 5e-4,
            weight_decay: 1e-4,
            adam_eps: 1e-8,
            adam_betas: (0.9, 0.999),
            total_epochs: 100,
            poly_power: 0.9,
            batch_size: 4,
            seed: 0,
            checkpoint_interval: 0,
            decoupled_weight_decay: false,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.total_epochs == 0 {
            return bad("total_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let (b1, b2) = self.adam_betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return bad(format!("Adam betas must lie in (0, 1), got ({b1}, {b2})"));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad(format!("learning rate must be finite and non-negative, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be finite and non-negative, got {}", self.weight_decay));
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if !(self.poly_power >= 0.0 && self.poly_power.is_finite()) {
            return bad(format!("poly power must be non-negative, got {}", self.poly_power));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let base = TrainConfig::default();
        for bad in [
            TrainConfig { total_epochs: 0, ..base.clone() },
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { adam_betas: (1.0, 0.999), ..base.clone() },
            TrainConfig { adam_betas: (0.9, 0.0), ..base.clone() },
            TrainConfig { base_lr: -1.0, ..base.clone() },
            TrainConfig { adam_eps: 0.0, ..base.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
