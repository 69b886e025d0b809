// Generates a synthetic dataset, reloads it and renders one label map
// with the class palette.

use artseg::data::{intensity_band, synth_generate, write_prediction, Palette, Split, SynthConfig};

type Res = Result<(), Box<dyn std::error::Error>>;

pub fn run_example() -> Res {
    let dir = tempfile::tempdir()?;
    let cfg = SynthConfig {
        samples: 3,
        height: 64,
        width: 64,
        num_classes: 4,
        seed: 21,
    };
    let ds = synth_generate(dir.path(), &cfg)?;
    for (split, n) in ds.counts() {
        println!("{:<10} {n} samples", split.name());
    }
    for c in 0..cfg.num_classes {
        let (lo, hi) = intensity_band(c, cfg.num_classes);
        println!("class {c}: intensities in [{lo:.4}, {hi:.4}]");
    }

    let samples = ds.load_split(Split::Train, 64, 64)?;
    let first = &samples[0];
    let mut histogram = [0usize; 4];
    for &c in &first.label {
        histogram[c as usize] += 1;
    }
    println!("{}: class pixel counts {histogram:?}", first.id);

    let palette = Palette::for_classes(cfg.num_classes)?;
    let (pred, vis) = write_prediction(dir.path(), &first.id, &first.label, 64, 64, &palette)?;
    println!("wrote {} and {}", pred.display(), vis.display());
    if histogram.iter().sum::<usize>() != 64 * 64 || !vis.is_file() {
        return Err("unexpected synthetic output".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
