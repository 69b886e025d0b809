// Builds a reduced-width network and prints the shape of every stage.

use artseg::autodiff::{Mode, Tape};
use artseg::{ArtSeg, ArtSegConfig, Tensor};

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let config = ArtSegConfig::default().with_width(0.25);
    let mut model = ArtSeg::<f32>::new(config, 1)?;
    println!("{} trainable parameters", model.parameter_count());

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_fn([1, 1, 64, 64], |i| (i % 64) as f32 / 64.0));
    let fwd = model.forward(&mut tape, x, Mode::Eval)?;
    for (name, var) in &fwd.trace {
        println!("{name:<12} {:?}", tape.shape(*var));
    }
    let logits = tape.shape(fwd.logits);
    if logits != [1, 9, 64, 64] {
        return Err(format!("unexpected logit shape {logits:?}").into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
