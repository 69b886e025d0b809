use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::adam_step;
use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::schedule::poly_lr;
use super::TrainState;
use crate::autodiff::{Mode, Tape};
use crate::data::{hflip, Sample};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{argmax_classes, ArtSeg};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 0-based epoch index.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// `epoch,loss,lr` with one row per epoch. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:?},{:?}", r.epoch, r.loss, r.lr);
        }
        s
    }
}

/// Optional side outputs of [`train_epochs`].
#[derive(Default)]
pub struct Hooks<'a> {
    /// Directory for periodic checkpoints named `epoch_<n>.arts`.
    pub checkpoint_dir: Option<&'a Path>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

/// Stacks samples of equal size into a B×1×H×W batch and its labels.
pub fn stack<T: Scalar>(samples: &[&Sample]) -> Result<(Tensor<T>, Vec<u8>)> {
    let first = samples.first().ok_or_else(|| Error::Usage("cannot stack an empty batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(samples.len() * h * w);
    let mut labels = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(Error::dim(
                "stack",
                format!("sample {} is {}×{}, batch is {h}×{w}", s.id, s.height, s.width),
            ));
        }
        data.extend(s.image.iter().map(|&v| T::from_f64(v as f64)));
        labels.extend_from_slice(&s.label);
    }
    Ok((Tensor::new(vec![samples.len(), 1, h, w], data)?, labels))
}

/// Generator for one epoch: the same seed and epoch always give the same
/// stream, so a resumed run continues exactly where it stopped.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Trains from `state.epoch` up to `cfg.total_epochs`. See
/// [`train_until`].
pub fn train_epochs<T: Scalar>(
    model: &mut ArtSeg<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
    hooks: Hooks<'_>,
) -> Result<History> {
    train_until(model, samples, cfg, state, cfg.total_epochs, hooks)
}

/// Trains from `state.epoch` up to epoch `stop` of a schedule that is
/// `cfg.total_epochs` long; stopping early and resuming later gives the
/// same result as one uninterrupted run.
///
/// Each epoch shuffles the samples, optionally flips each one
/// horizontally with probability 0.5, and takes one Adam step per batch
/// at the epoch's polynomial learning rate. A non-finite batch loss
/// aborts with the epoch and batch index.
pub fn train_until<T: Scalar>(
    model: &mut ArtSeg<T>,
    samples: &[Sample],
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
    stop: usize,
    mut hooks: Hooks<'_>,
) -> Result<History> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if stop > cfg.total_epochs {
        return Err(Error::Usage(format!(
            "stop epoch {stop} is past the schedule end {}",
            cfg.total_epochs
        )));
    }
    let mut history = History::default();
    while state.epoch < stop {
        let epoch = state.epoch;
        let lr = poly_lr(epoch, cfg)?;
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let flips: Vec<bool> = order.iter().map(|_| cfg.augment && rng.gen_bool(0.5)).collect();

        let mut weighted = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let flipped: Vec<Sample>;
            let members: Vec<&Sample> = if cfg.augment {
                let start = batch * cfg.batch_size;
                flipped = idx
                    .iter()
                    .zip(&flips[start..])
                    .map(|(&i, &f)| if f { hflip(&samples[i]) } else { samples[i].clone() })
                    .collect();
                flipped.iter().collect()
            } else {
                idx.iter().map(|&i| &samples[i]).collect()
            };
            let (images, labels) = stack::<T>(&members)?;

            let mut tape = Tape::new();
            let x = tape.constant(images);
            let out = model.forward(&mut tape, x, Mode::Train)?;
            let loss_var = tape.softmax_cross_entropy(out.logits, &labels)?;
            let loss = tape.value(loss_var).data()[0].to_f64();
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch, batch, loss });
            }
            let grads = tape.backward(loss_var)?;
            model.accumulate_grads(&grads, &out.binding)?;
            adam_step(model.store_mut(), &mut state.adam, lr, cfg)?;
            weighted += loss * idx.len() as f64;
        }

        state.epoch += 1;
        let record = EpochRecord {
            epoch,
            loss: weighted / samples.len() as f64,
            lr,
        };
        history.records.push(record);
        if let Some(f) = hooks.on_epoch.as_mut() {
            f(&record);
        }
        if let Some(dir) = hooks.checkpoint_dir {
            if cfg.checkpoint_interval > 0 && state.epoch % cfg.checkpoint_interval == 0 {
                save_checkpoint(dir.join(format!("epoch_{:04}.arts", state.epoch)), model, state)?;
            }
        }
    }
    Ok(history)
}

/// Eval-mode predictions for `samples`, in order, `batch` images at a
/// time.
pub fn predict_samples<T: Scalar>(model: &mut ArtSeg<T>, samples: &[Sample], batch: usize) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let members: Vec<&Sample> = chunk.iter().collect();
        let (images, _) = stack::<T>(&members)?;
        let pred = argmax_classes(&model.logits(&images)?);
        let hw = chunk[0].height * chunk[0].width;
        out.extend(pred.chunks(hw).map(<[u8]>::to_vec));
    }
    Ok(out)
}

/// Confusion matrix of eval-mode predictions against the labels.
pub fn evaluate<T: Scalar>(model: &mut ArtSeg<T>, samples: &[Sample]) -> Result<ConfusionMatrix> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation split is empty".into()));
    }
    let mut cm = ConfusionMatrix::new(model.config().num_classes)?;
    for (s, pred) in samples.iter().zip(predict_samples(model, samples, 4)?) {
        cm.accumulate(&pred, &s.label)?;
    }
    Ok(cm)
}
