use super::config::TrainConfig;
use crate::error::{Error, Result};

/// Polynomial decay `base_lr · (1 − epoch/total_epochs)^p`, evaluated
/// once per epoch.
pub fn poly_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.total_epochs {
        return Err(Error::Usage(format!(
            "epoch {epoch} is past the schedule end {}",
            cfg.total_epochs
        )));
    }
    let frac = 1.0 - epoch as f64 / cfg.total_epochs as f64;
    Ok(cfg.base_lr * frac.powf(cfg.poly_power))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(total: usize) -> TrainConfig {
        TrainConfig {
            total_epochs: total,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fixed_points() {
        let c = cfg(100);
        assert_eq!(poly_lr(0, &c).unwrap(), 5e-4);
        assert_eq!(poly_lr(100, &c).unwrap(), 0.0);
        // 5e-4 · 0.5^0.9 = 5e-4 · 0.535886731...
        assert!((poly_lr(50, &c).unwrap() - 2.679433656340733e-4).abs() < 1e-15);
        assert!(matches!(poly_lr(101, &c), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn strictly_decreasing(total in 1usize..400, p in 0.05f64..3.0) {
            let c = TrainConfig { poly_power: p, ..cfg(total) };
            let lrs: Vec<f64> = (0..=total).map(|e| poly_lr(e, &c).unwrap()).collect();
            prop_assert_eq!(lrs[0], c.base_lr);
            prop_assert_eq!(lrs[total], 0.0);
            for w in lrs.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
        }
    }
}
