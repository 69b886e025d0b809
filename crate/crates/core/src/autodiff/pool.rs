use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Non-overlapping max pooling. Returns the output and, per output
/// element, the flat input index of its first row-major maximum.
pub(crate) fn max_pool_forward<T: Scalar>(input: &Tensor<T>, kernel: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, h, w] = input.dims4("max_pool2d")?;
    if kernel == 0 {
        return Err(Error::Config("max_pool2d kernel must be positive".into()));
    }
    if h % kernel != 0 || w % kernel != 0 {
        return Err(Error::dim(
            "max_pool2d",
            format!("spatial size {h}×{w} is not divisible by kernel {kernel}"),
        ));
    }
    let (ho, wo) = (h / kernel, w / kernel);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * kernel * w + ox * kernel;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = base + (oy * kernel + ky) * w + ox * kernel + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new([b, c, ho, wo], out)?, argmax))
}

pub(crate) fn max_pool_backward<T: Scalar>(input: &Tensor<T>, argmax: &[usize], upstream: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input.shape().to_vec());
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(upstream.data()) {
        d[idx] = d[idx] + g;
    }
    dx
}

pub(crate) fn upsample_forward<T: Scalar>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = input.dims4("upsample_nearest")?;
    if factor < 1 {
        return Err(Error::Config("upsample factor must be at least 1".into()));
    }
    let (ho, wo) = (h * factor, w * factor);
    let x = input.data();
    let mut out = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        for oy in 0..ho {
            let row = &x[(plane * h + oy / factor) * w..][..w];
            out.extend((0..wo).map(|ox| row[ox / factor]));
        }
    }
    Tensor::new([b, c, ho, wo], out)
}

pub(crate) fn upsample_backward<T: Scalar>(input: &Tensor<T>, factor: usize, upstream: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = input.dims4("upsample_nearest").expect("validated in forward");
    let wo = w * factor;
    let dy = upstream.data();
    let mut dx = Tensor::zeros(input.shape().to_vec());
    let d = dx.data_mut();
    for plane in 0..b * c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = T::zero();
                for fy in 0..factor {
                    let row = &dy[(plane * h * factor + y * factor + fy) * wo..][..wo];
                    for fx in 0..factor {
                        acc = acc + row[x * factor + fx];
                    }
                }
                d[(plane * h + y) * w + x] = acc;
            }
        }
    }
    dx
}

impl<T: Scalar> Tape<T> {
    /// Windowed maximum with `stride == kernel`.
    pub fn max_pool2d(&mut self, input: Var, kernel: usize) -> Result<Var> {
        let (out, argmax) = max_pool_forward(self.value(input), kernel)?;
        Ok(self.record(out, &[input], Op::MaxPool2d { input, argmax }))
    }

    /// Replicates each pixel into a `factor`×`factor` block.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = upsample_forward(self.value(input), factor)?;
        Ok(self.record(out, &[input], Op::Upsample { input, factor }))
    }
}
