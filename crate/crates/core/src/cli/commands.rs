use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::RunConfig;
use crate::autodiff::Primitive;
use crate::data::{
    read_image, resize_image, resize_labels, scan_dataset, synth_generate, write_prediction, Dataset, Palette, Sample,
    Split, SynthConfig,
};
use crate::error::{Error, Result};
use crate::gradcheck::{format_report, run_suite, SuiteOptions};
use crate::metrics::{per_class_report, summary_table, Report};
use crate::model::{argmax_classes, ArtSeg};
use crate::tensor::Tensor;
use crate::train::{evaluate, load_checkpoint, save_checkpoint, train_epochs, Hooks, TrainState};

/// Split selector of `eval`; `Test` is the union of both test splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    One(Split),
    Test,
}

impl EvalSplit {
    pub fn from_name(name: &str) -> Result<Self> {
        if name == "test" {
            return Ok(EvalSplit::Test);
        }
        Split::from_name(name).map(EvalSplit::One).map_err(|_| {
            Error::Usage(format!(
                "unknown split {name:?}; valid splits: train, test, test_day, test_night"
            ))
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::One(s) => s.name(),
            EvalSplit::Test => "test",
        }
    }

    fn parts(self) -> Vec<Split> {
        match self {
            EvalSplit::One(s) => vec![s],
            EvalSplit::Test => vec![Split::TestDay, Split::TestNight],
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) {
    let _ = writeln!(out, "{}", text.as_ref());
}

/// Trains on the train split; writes `history.csv`, `final.arts` and any
/// periodic checkpoints to the output directory. Everything is validated
/// and loaded before the directory is created.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> Result<i32> {
    cfg.validate()?;
    let (mut model, mut state) = match resume {
        Some(path) => load_checkpoint::<f32>(path)?,
        None => {
            let model = ArtSeg::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
            let state = TrainState::new(&model);
            (model, state)
        }
    };
    let ds = scan_dataset(cfg.data_root()?, model.config().num_classes)?;
    let samples = ds.load_split(Split::Train, cfg.size, cfg.size)?;
    if state.epoch >= cfg.train.total_epochs {
        return Err(Error::Config(format!(
            "checkpoint already completed {} of {} epochs",
            state.epoch, cfg.train.total_epochs
        )));
    }

    create_dir(&cfg.out)?;
    say(
        out,
        format!(
            "training {} parameters on {} images at {}×{} for epochs {}..{}",
            model.parameter_count(),
            samples.len(),
            cfg.size,
            cfg.size,
            state.epoch,
            cfg.train.total_epochs
        ),
    );
    let mut log = |r: &crate::train::EpochRecord| say(out, format!("epoch {:>4}  loss {:.6}  lr {:.3e}", r.epoch, r.loss, r.lr));
    let history = train_epochs(
        &mut model,
        &samples,
        &cfg.train,
        &mut state,
        Hooks {
            checkpoint_dir: Some(&cfg.out),
            on_epoch: Some(&mut log),
        },
    )?;
    write_file(&cfg.out.join("history.csv"), &history.to_csv())?;
    let final_path = cfg.out.join("final.arts");
    save_checkpoint(&final_path, &model, &state)?;
    say(out, format!("wrote {}", final_path.display()));
    Ok(0)
}

fn load_parts(ds: &Dataset, split: EvalSplit, size: usize) -> Result<Vec<(Split, Vec<Sample>)>> {
    split
        .parts()
        .into_iter()
        .map(|s| Ok((s, ds.load_split(s, size, size)?)))
        .collect()
}

fn report_for(model: &mut ArtSeg<f32>, samples: &[Sample], palette: &Palette) -> Result<Report> {
    let cm = evaluate(model, samples)?;
    per_class_report(&cm, &palette.names())
}

/// Prints the per-class report of a checkpoint on `split` and writes it
/// as `eval_<split>.csv`. The `test` split also reports day and night
/// separately.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, split: EvalSplit, out: &mut dyn Write) -> Result<i32> {
    let (mut model, _) = load_checkpoint::<f32>(checkpoint)?;
    model.config().check_input_size(cfg.size, cfg.size)?;
    let classes = model.config().num_classes;
    let palette = Palette::for_classes(classes)?;
    let ds = scan_dataset(cfg.data_root()?, classes)?;
    let parts = load_parts(&ds, split, cfg.size)?;
    let all: Vec<Sample> = parts.iter().flat_map(|(_, s)| s.iter().cloned()).collect();
    if all.is_empty() {
        return Err(Error::Config(format!("split {} of {} is empty", split.name(), ds.root().display())));
    }

    let report = report_for(&mut model, &all, &palette)?;
    say(out, format!("split {} ({} images)", split.name(), all.len()));
    say(out, report.to_text());
    let mut labelled = vec![(split.name().to_string(), report)];
    if parts.len() > 1 {
        for (s, samples) in &parts {
            if !samples.is_empty() {
                labelled.push((s.name().to_string(), report_for(&mut model, samples, &palette)?));
            }
        }
    }
    let rows: Vec<(&str, &Report)> = labelled.iter().map(|(l, r)| (l.as_str(), r)).collect();
    let summary = summary_table(&rows);
    say(out, summary);

    create_dir(&cfg.out)?;
    let csv = cfg.out.join(format!("eval_{}.csv", split.name()));
    write_file(&csv, &labelled[0].1.to_csv())?;
    say(out, format!("wrote {}", csv.display()));
    Ok(0)
}

fn infer_one(model: &mut ArtSeg<f32>, path: &Path, size: usize, dir: &Path, palette: &Palette) -> Result<()> {
    let (h, w, pixels) = read_image(path)?;
    let input = if (h, w) == (size, size) {
        pixels
    } else {
        resize_image(&pixels, h, w, size, size)
    };
    let images = Tensor::new(vec![1, 1, size, size], input)?;
    let pred = argmax_classes(&model.logits(&images)?);
    let pred = if (h, w) == (size, size) {
        pred
    } else {
        resize_labels(&pred, size, size, h, w)
    };
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Usage(format!("cannot derive an output name from {}", path.display())))?;
    write_prediction(dir, stem, &pred, h, w, palette)?;
    Ok(())
}

/// Segments each image at the configured input size and writes the
/// prediction at the image's own size. A failing image is reported and
/// skipped; the exit code is 1 if any failed.
pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    images: &[impl AsRef<Path>],
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let (mut model, _) = load_checkpoint::<f32>(checkpoint)?;
    model.config().check_input_size(cfg.size, cfg.size)?;
    let palette = Palette::for_classes(model.config().num_classes)?;
    create_dir(&cfg.out)?;
    let mut failed = 0;
    for path in images {
        let path = path.as_ref();
        match infer_one(&mut model, path, cfg.size, &cfg.out, &palette) {
            Ok(()) => say(out, format!("{}: ok", path.display())),
            Err(e) => {
                failed += 1;
                let _ = writeln!(err, "{}: {e}", path.display());
            }
        }
    }
    say(out, format!("{} of {} images segmented", images.len() - failed, images.len()));
    Ok(if failed == 0 { 0 } else { 1 })
}

/// Runs the gradient-check suite and prints one row per check; exit 0
/// only if every row passes.
pub fn cmd_gradcheck(cfg: &RunConfig, primitives_only: bool, fault: Option<&str>, out: &mut dyn Write) -> Result<i32> {
    let fault = fault
        .map(|name| {
            Primitive::from_name(name).ok_or_else(|| {
                let names: Vec<&str> = Primitive::ALL.iter().map(|p| p.name()).collect();
                Error::Usage(format!("unknown primitive {name:?}; known: {}", names.join(", ")))
            })
        })
        .transpose()?;
    let opts = SuiteOptions {
        seed: cfg.train.seed,
        include_model: !primitives_only,
        fault,
        ..SuiteOptions::default()
    };
    let rows = run_suite(&opts)?;
    let _ = write!(out, "{}", format_report(&rows, opts.tolerance));
    Ok(if rows.iter().all(|r| r.result.passes(opts.tolerance)) { 0 } else { 1 })
}

/// Writes a synthetic dataset of `cfg.samples` scenes to the output
/// directory.
pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<i32> {
    let synth = SynthConfig {
        samples: cfg.samples,
        height: cfg.size,
        width: cfg.size,
        num_classes: cfg.model.num_classes,
        seed: cfg.train.seed,
    };
    let ds = synth_generate(&cfg.out, &synth)?;
    say(
        out,
        format!(
            "wrote {} scenes of {}×{} with {} classes to {}",
            synth.samples,
            synth.height,
            synth.width,
            synth.num_classes,
            ds.root().display()
        ),
    );
    Ok(0)
}
