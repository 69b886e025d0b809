//! Per-channel batch normalization over (batch, height, width).

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Whether normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Running mean and (unbiased) variance, one entry per channel.
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
}

pub(crate) struct Normalized<T> {
    pub out: Tensor<T>,
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) fn forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: RunningStats<'_, T>,
    mode: Mode,
    cfg: BatchNormConfig,
) -> Result<Normalized<T>> {
    let [b, c, h, w] = input.dims4("batch_norm2d")?;
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [c] {
            return Err(Error::dim(
                "batch_norm2d",
                format!("{name} shape {:?} does not match {c} channels", t.shape()),
            ));
        }
    }
    if stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::dim("batch_norm2d", "running statistics length mismatch"));
    }
    let hw = h * w;
    let count = b * hw;
    let x = input.data();
    let eps = T::from_f64(cfg.eps);
    let momentum = T::from_f64(cfg.momentum);
    let plane = |n: usize, ch: usize| &x[(n * c + ch) * hw..][..hw];

    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    match mode {
        Mode::Train => {
            let m = T::from_f64(count as f64);
            for ch in 0..c {
                let s = (0..b).fold(T::zero(), |acc, n| plane(n, ch).iter().fold(acc, |a, &v| a + v));
                let mu = s / m;
                let sq = (0..b).fold(T::zero(), |acc, n| {
                    plane(n, ch).iter().fold(acc, |a, &v| a + (v - mu) * (v - mu))
                });
                mean[ch] = mu;
                var[ch] = sq / m;
                let unbiased = if count > 1 {
                    sq / T::from_f64((count - 1) as f64)
                } else {
                    var[ch]
                };
                stats.mean[ch] = (T::one() - momentum) * stats.mean[ch] + momentum * mu;
                stats.var[ch] = (T::one() - momentum) * stats.var[ch] + momentum * unbiased;
            }
        }
        Mode::Eval => {
            mean.copy_from_slice(stats.mean);
            var.copy_from_slice(stats.var);
        }
    }

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for n in 0..b {
        for ch in 0..c {
            let off = (n * c + ch) * hw;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in off..off + hw {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                x_hat[i] = xh;
                out[i] = g * xh + bt;
            }
        }
    }
    Ok(Normalized {
        out: Tensor::new(input.shape().to_vec(), out)?,
        x_hat,
        inv_std,
    })
}

pub(crate) fn backward<T: Scalar>(
    gamma: &Tensor<T>,
    x_hat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    upstream: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [b, c, h, w] = upstream.dims4("batch_norm2d").expect("validated in forward");
    let hw = h * w;
    let dy = upstream.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for n in 0..b {
        for ch in 0..c {
            let off = (n * c + ch) * hw;
            for i in off..off + hw {
                dbeta[ch] = dbeta[ch] + dy[i];
                dgamma[ch] = dgamma[ch] + dy[i] * x_hat[i];
            }
        }
    }
    let m = T::from_f64((b * hw) as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for n in 0..b {
        for ch in 0..c {
            let off = (n * c + ch) * hw;
            let scale = gamma.data()[ch] * inv_std[ch];
            for i in off..off + hw {
                dx[i] = if batch_stats {
                    scale * (dy[i] - dbeta[ch] / m - x_hat[i] * dgamma[ch] / m)
                } else {
                    scale * dy[i]
                };
            }
        }
    }
    (
        Tensor::new(upstream.shape().to_vec(), dx).expect("shape"),
        Tensor::new([c], dgamma).expect("shape"),
        Tensor::new([c], dbeta).expect("shape"),
    )
}

impl<T: Scalar> Tape<T> {
    /// Batch normalization with affine transform `gamma·x̂ + beta`.
    ///
    /// In [`Mode::Train`] the running statistics are updated in place.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: RunningStats<'_, T>,
        mode: Mode,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let n = forward(self.value(input), self.value(gamma), self.value(beta), stats, mode, cfg)?;
        Ok(self.record(
            n.out,
            &[input, gamma, beta],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                x_hat: n.x_hat,
                inv_std: n.inv_std,
                batch_stats: mode == Mode::Train,
            },
        ))
    }
}
