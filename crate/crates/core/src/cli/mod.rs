//! The `artseg` command line: argument parsing and the five commands.
//!
//! [`main_with_args`] is the whole program; the binary only forwards the
//! process arguments and standard streams to it.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_eval, cmd_gradcheck, cmd_infer, cmd_synth, cmd_train, EvalSplit};
pub use config::{RunConfig, KEYS};

use crate::error::{Error, Result};
use crate::parallel;

#[derive(Debug, Parser)]
#[command(
    name = "artseg",
    version,
    about = "Thermal image semantic segmentation: train, evaluate, infer, gradient-check, synthesize data",
    after_help = "Environment: ARTSEG_THREADS caps worker threads (0 or unset: single-threaded)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Each overrides the matching key of the
/// configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct Shared {
    /// Configuration file of `key = value` lines (`#` comments)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Dataset root containing images/, labels/ and splits/
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Seed for initialization, shuffling, augmentation and synthesis [default: 0]
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Total training epochs [default: 100]
    #[arg(long, value_name = "INT")]
    pub epochs: Option<usize>,
    /// Base learning rate [default: 5e-4]
    #[arg(long, value_name = "FLOAT")]
    pub lr: Option<f64>,
    /// Batch size [default: 4]
    #[arg(long, value_name = "INT")]
    pub batch: Option<usize>,
    /// Number of classes [default: 9]
    #[arg(long, value_name = "INT")]
    pub classes: Option<usize>,
    /// Channel width multiplier [default: 1.0]
    #[arg(long, value_name = "FLOAT")]
    pub width: Option<f64>,
    /// Square image side: network input size, or generated size for synth [default: 256]
    #[arg(long, value_name = "INT")]
    pub size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write history.csv and checkpoints to the output directory
    Train {
        #[command(flatten)]
        shared: Shared,
        /// Resume from this checkpoint instead of a fresh initialization
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a split and print per-class accuracy and IoU
    Eval {
        #[command(flatten)]
        shared: Shared,
        /// Checkpoint to evaluate (model settings are taken from it)
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// train, test, test_day or test_night (test = test_day + test_night)
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Segment images, writing <stem>_pred.png and <stem>_vis.png per image
    Infer {
        #[command(flatten)]
        shared: Shared,
        /// Checkpoint to run (model settings are taken from it)
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Grayscale PNG images
        #[arg(required = true, value_name = "IMAGE")]
        images: Vec<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences in double precision
    Gradcheck {
        #[command(flatten)]
        shared: Shared,
        /// Skip the full-model check
        #[arg(long)]
        primitives_only: bool,
        /// Corrupt the backward rule of this primitive to confirm the check catches it
        #[arg(long, value_name = "PRIMITIVE")]
        inject_fault: Option<String>,
    },
    /// Generate a synthetic dataset of labelled shapes under --out
    Synth {
        #[command(flatten)]
        shared: Shared,
        /// Number of scenes [default: 4]
        #[arg(short = 'n', long = "samples", value_name = "INT")]
        samples: Option<usize>,
    },
}

impl Shared {
    /// Defaults, then the configuration file, then these flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = &self.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.total_epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.train.base_lr = v;
        }
        if let Some(v) = self.batch {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.classes {
            cfg.model.num_classes = v;
        }
        if let Some(v) = self.width {
            cfg.model.width_multiplier = v;
        }
        if let Some(v) = self.size {
            cfg.size = v;
        }
        Ok(cfg)
    }
}

/// Runs one parsed command, returning the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    parallel::set_threads(parallel::threads_from_env()?);
    match cli.command {
        Command::Train { shared, checkpoint } => cmd_train(&shared.resolve()?, checkpoint.as_deref(), out),
        Command::Eval {
            shared,
            checkpoint,
            split,
        } => {
            let split = EvalSplit::from_name(&split)?;
            cmd_eval(&shared.resolve()?, &checkpoint, split, out)
        }
        Command::Infer {
            shared,
            checkpoint,
            images,
        } => cmd_infer(&shared.resolve()?, &checkpoint, &images, out, err),
        Command::Gradcheck {
            shared,
            primitives_only,
            inject_fault,
        } => cmd_gradcheck(&shared.resolve()?, primitives_only, inject_fault.as_deref(), out),
        Command::Synth { shared, samples } => {
            let mut cfg = shared.resolve()?;
            if let Some(n) = samples {
                cfg.samples = n;
            }
            cmd_synth(&cfg, out)
        }
    }
}

/// Parses `args` (program name first) and runs the command. Diagnostics
/// go to `err`; usage errors exit 2, other failures 1.
pub fn main_with_args<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(sink, "{text}");
            return code;
        }
    };
    match run(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}
