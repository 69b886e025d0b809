// Fits a narrow network to two synthetic scenes and reports the
// training-set scores.

use artseg::data::{synth_generate, Split, SynthConfig};
use artseg::train::{evaluate, train_epochs, Hooks, TrainConfig, TrainState};
use artseg::{ArtSeg, ArtSegConfig};

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let dir = tempfile::tempdir()?;
    let synth = SynthConfig {
        samples: 2,
        height: 32,
        width: 32,
        num_classes: 3,
        seed: 2,
    };
    let samples = synth_generate(dir.path(), &synth)?.load_split(Split::Train, 32, 32)?;

    let mut model = ArtSeg::<f32>::new(ArtSegConfig::default().with_width(0.125).with_classes(3), 2)?;
    let cfg = TrainConfig {
        total_epochs: 60,
        base_lr: 3e-3,
        batch_size: 2,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(&model);
    let mut log = |r: &artseg::train::EpochRecord| {
        if r.epoch % 10 == 0 {
            println!("epoch {:>3}  loss {:.4}  lr {:.2e}", r.epoch, r.loss, r.lr);
        }
    };
    let hooks = Hooks {
        on_epoch: Some(&mut log),
        ..Hooks::default()
    };
    let history = train_epochs(&mut model, &samples, &cfg, &mut state, hooks)?;

    let cm = evaluate(&mut model, &samples)?;
    let first = history.records.first().ok_or("no epochs")?.loss;
    let last = history.records.last().ok_or("no epochs")?.loss;
    println!(
        "loss {first:.4} → {last:.4}; pixel accuracy {:.2}%, mIoU {:.3}",
        100.0 * cm.pixel_accuracy().unwrap_or(0.0),
        cm.mean_iou().unwrap_or(0.0)
    );
    if last > 0.5 * first {
        return Err("training did not reduce the loss".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
