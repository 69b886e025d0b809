use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean per-pixel softmax cross-entropy. Returns the loss and the
/// per-pixel probabilities (same layout as `logits`).
pub(crate) fn softmax_ce_forward<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<(T, Vec<T>)> {
    let [b, c, h, w] = logits.dims4("softmax_cross_entropy")?;
    let hw = h * w;
    if labels.len() != b * hw {
        return Err(Error::dim(
            "softmax_cross_entropy",
            format!("{} labels for a {b}×{h}×{w} logit map", labels.len()),
        ));
    }
    let x = logits.data();
    let mut probs = vec![T::zero(); x.len()];
    let mut total = T::zero();
    for n in 0..b {
        for p in 0..hw {
            let label = labels[n * hw + p] as usize;
            if label >= c {
                return Err(Error::Data(format!(
                    "label {label} at pixel (batch {n}, row {}, col {}) is outside [0, {c})",
                    p / w,
                    p % w
                )));
            }
            let at = |k: usize| (n * c + k) * hw + p;
            let max = (0..c).fold(T::neg_infinity(), |m, k| m.max(x[at(k)]));
            let mut z = T::zero();
            for k in 0..c {
                let e = (x[at(k)] - max).exp();
                probs[at(k)] = e;
                z = z + e;
            }
            for k in 0..c {
                probs[at(k)] = probs[at(k)] / z;
            }
            // −log softmax of the true class
            total = total + (z.ln() + max - x[at(label)]);
        }
    }
    Ok((total / T::from_f64((b * hw) as f64), probs))
}

pub(crate) fn softmax_ce_backward<T: Scalar>(
    logits: &Tensor<T>,
    probs: &[T],
    labels: &[u8],
    upstream: &Tensor<T>,
) -> Tensor<T> {
    let [b, c, h, w] = logits.dims4("softmax_cross_entropy").expect("validated in forward");
    let hw = h * w;
    let scale = upstream.data()[0] / T::from_f64((b * hw) as f64);
    let mut g: Vec<T> = probs.iter().map(|&p| p * scale).collect();
    for n in 0..b {
        for p in 0..hw {
            let idx = (n * c + labels[n * hw + p] as usize) * hw + p;
            g[idx] = g[idx] - scale;
        }
    }
    Tensor::new(logits.shape().to_vec(), g).expect("shape")
}

impl<T: Scalar> Tape<T> {
    /// Mean cross-entropy of per-pixel softmax over the class axis of
    /// `logits` (B×C×H×W) against class indices `labels` (B×H×W).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let (loss, probs) = softmax_ce_forward(self.value(logits), labels)?;
        Ok(self.record(
            Tensor::scalar(loss),
            &[logits],
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }
}
