//! Run configuration: a `key = value` file merged with command-line
//! overrides.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ArtSegConfig;
use crate::train::TrainConfig;

/// Every key accepted in a configuration file, with its meaning.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "dataset root directory"),
    ("out", "output directory"),
    ("seed", "seed for initialization, shuffling, augmentation and synthesis"),
    ("epochs", "total training epochs (schedule length)"),
    ("lr", "base learning rate"),
    ("batch", "batch size"),
    ("classes", "number of classes"),
    ("width", "channel width multiplier"),
    ("size", "square input side length in pixels"),
    ("weight_decay", "L2 weight decay"),
    ("adam_eps", "Adam epsilon"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("poly_power", "exponent of the polynomial learning-rate decay"),
    ("checkpoint_interval", "epochs between periodic checkpoints (0 = final only)"),
    ("decoupled_weight_decay", "apply weight decay to the weights instead of the gradient"),
    ("augment", "random horizontal flips during training"),
    ("recurrence_steps", "recurrent steps per recurrent conv unit"),
    ("samples", "number of scenes written by synth"),
];

/// Merged view of defaults, configuration file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub size: usize,
    pub samples: usize,
    pub model: ArtSegConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: PathBuf::from("out"),
            size: 256,
            samples: 4,
            model: ArtSegConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "seed" => self.train.seed = parse(key, value)?,
            "epochs" => self.train.total_epochs = parse(key, value)?,
            "lr" => self.train.base_lr = parse(key, value)?,
            "batch" => self.train.batch_size = parse(key, value)?,
            "classes" => self.model.num_classes = parse(key, value)?,
            "width" => self.model.width_multiplier = parse(key, value)?,
            "size" => self.size = parse(key, value)?,
            "weight_decay" => self.train.weight_decay = parse(key, value)?,
            "adam_eps" => self.train.adam_eps = parse(key, value)?,
            "beta1" => self.train.adam_betas.0 = parse(key, value)?,
            "beta2" => self.train.adam_betas.1 = parse(key, value)?,
            "poly_power" => self.train.poly_power = parse(key, value)?,
            "checkpoint_interval" => self.train.checkpoint_interval = parse(key, value)?,
            "decoupled_weight_decay" => self.train.decoupled_weight_decay = parse(key, value)?,
            "augment" => self.train.augment = parse(key, value)?,
            "recurrence_steps" => self.model.recurrence_steps = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            _ => {
                let known: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
                return Err(Error::Config(format!(
                    "unknown key {key:?} (known keys: {})",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment; blank lines are
    /// ignored; a key may appear only once.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("{origin}:{}: {msg}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(at(format!("key {key:?} given twice")));
            }
            seen.push(key);
            self.set(key, value).map_err(|e| match e {
                Error::Config(m) => at(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Checks the model, training and size settings together.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.model.check_input_size(self.size, self.size)
    }

    pub fn data_root(&self) -> Result<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset root given (use --data or the data key)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_keys_and_comments() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# run\nepochs = 7\nlr=0.001 # faster\n\nwidth = 0.25\naugment = false\ndata = /tmp/x\n",
            "run.cfg",
        )
        .unwrap();
        assert_eq!(c.train.total_epochs, 7);
        assert_eq!(c.train.base_lr, 1e-3);
        assert_eq!(c.model.width_multiplier, 0.25);
        assert!(!c.train.augment);
        assert_eq!(c.data.as_deref(), Some(Path::new("/tmp/x")));
    }

    #[test]
    fn bad_lines_name_the_location() {
        for (text, needle) in [
            ("epochs = 3\nfoo = 1\n", "run.cfg:2: unknown key \"foo\""),
            ("epochs = three\n", "run.cfg:1: invalid value"),
            ("epochs\n", "run.cfg:1: expected key = value"),
            ("seed = 1\nseed = 2\n", "run.cfg:2: key \"seed\" given twice"),
        ] {
            let err = RunConfig::default().apply_text(text, "run.cfg").unwrap_err().to_string();
            assert!(err.contains(needle), "{err}");
        }
    }

    #[test]
    fn every_listed_key_is_settable() {
        let sample = |k: &str| match k {
            "data" | "out" => "p",
            "lr" | "width" | "weight_decay" | "adam_eps" | "beta1" | "beta2" | "poly_power" => "0.5",
            "decoupled_weight_decay" | "augment" => "true",
            _ => "3",
        };
        for (k, _) in KEYS {
            RunConfig::default().set(k, sample(k)).unwrap();
        }
    }

    #[test]
    fn validation_covers_size() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        c.size = 100;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
