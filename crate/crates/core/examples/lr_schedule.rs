// Prints the polynomial learning-rate decay over a training run.

use artseg::train::{poly_lr, TrainConfig};

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let cfg = TrainConfig {
        total_epochs: 40,
        ..TrainConfig::default()
    };
    let mut previous = f64::INFINITY;
    for epoch in (0..=cfg.total_epochs).step_by(5) {
        let lr = poly_lr(epoch, &cfg)?;
        println!("epoch {epoch:>3}  lr {lr:.3e}");
        if lr >= previous {
            return Err("learning rate must decrease".into());
        }
        previous = lr;
    }
    if poly_lr(cfg.total_epochs + 1, &cfg).is_ok() {
        return Err("epochs past the end must be rejected".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
