// Saves a model with its optimizer state, reloads it and compares
// logits bit for bit; a damaged file is rejected.

use artseg::train::{load_checkpoint, save_checkpoint, TrainState};
use artseg::{ArtSeg, ArtSegConfig, Tensor};

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.arts");
    let mut model = ArtSeg::<f32>::new(ArtSegConfig::default().with_width(0.125).with_classes(4), 8)?;
    let state = TrainState::new(&model);
    save_checkpoint(&path, &model, &state)?;
    println!("{} bytes for {} parameters", std::fs::metadata(&path)?.len(), model.parameter_count());

    let (mut loaded, loaded_state) = load_checkpoint::<f32>(&path)?;
    let images = Tensor::from_fn([2, 1, 32, 32], |i| ((i * 7) % 31) as f32 / 31.0);
    let a = model.logits(&images)?;
    let b = loaded.logits(&images)?;
    let identical = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    println!("reloaded logits identical: {identical}; resumes at epoch {}", loaded_state.epoch);

    let mut bytes = std::fs::read(&path)?;
    bytes[0] ^= 0xff;
    std::fs::write(&path, &bytes)?;
    match load_checkpoint::<f32>(&path) {
        Err(e) => println!("damaged file: {e}"),
        Ok(_) => return Err("damaged checkpoint was accepted".into()),
    }
    if !identical {
        return Err("logits changed after reload".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
