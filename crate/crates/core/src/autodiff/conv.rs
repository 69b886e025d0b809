//! 2-D cross-correlation lowered to GEMM through im2col.

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::parallel::map_indexed;
use crate::tensor::{MatmulDims, Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl Geometry {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let [batch, cin, h, w] = *input else {
            return Err(Error::dim("conv2d", format!("input must be rank 4, got {input:?}")));
        };
        let [cout, wcin, kh, kw] = *weight else {
            return Err(Error::dim("conv2d", format!("weight must be rank 4, got {weight:?}")));
        };
        if wcin != cin {
            return Err(Error::dim(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Config(format!("conv2d kernel must be square and odd, got {kh}×{kw}")));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be positive".into()));
        }
        let out = |n: usize| -> Result<usize> {
            let span = (n + 2 * pad)
                .checked_sub(kh)
                .ok_or_else(|| Error::Config(format!("conv2d kernel {kh} exceeds padded extent of {n}")))?;
            if span % stride != 0 {
                return Err(Error::Config(format!(
                    "conv2d output size ({n} + 2·{pad} − {kh})/{stride} + 1 is not integral"
                )));
            }
            Ok(span / stride + 1)
        };
        Ok(Geometry {
            batch,
            cin,
            h,
            w,
            cout,
            k: kh,
            stride,
            pad,
            ho: out(h)?,
            wo: out(w)?,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// A 1×1 stride-1 unpadded convolution reads the input as its own
    /// column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward kernel, usable without a tape.
pub(crate) fn forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::dim(
                "conv2d",
                format!("bias shape {:?} does not match {} output channels", b.shape(), g.cout),
            ));
        }
    }
    let in_item = g.cin * g.h * g.w;
    let out_item = g.cout * g.positions();
    let x = input.data();
    let items = map_indexed(g.batch, |n| {
        let xb = &x[n * in_item..(n + 1) * in_item];
        let mut out = vec![T::zero(); out_item];
        let dims = MatmulDims {
            m: g.cout,
            k: g.patch(),
            n: g.positions(),
            a_t: false,
            b_t: false,
        };
        if g.is_pointwise() {
            T::matmul(dims, weight.data(), xb, &mut out, false);
        } else {
            let mut cols = vec![T::zero(); g.patch() * g.positions()];
            im2col(xb, &g, &mut cols);
            T::matmul(dims, weight.data(), &cols, &mut out, false);
        }
        if let Some(b) = bias {
            for (co, chunk) in out.chunks_mut(g.positions()).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        out
    });
    Tensor::new([g.batch, g.cout, g.ho, g.wo], items.concat())
}

pub(crate) struct ConvGrads<T> {
    input: Option<Tensor<T>>,
    weight: Option<Tensor<T>>,
    bias: Tensor<T>,
}

impl<T> ConvGrads<T> {
    pub fn into_contributions(self, input: Var, weight: Var, bias: Option<Var>) -> Vec<(Var, Tensor<T>)> {
        let mut out = Vec::with_capacity(3);
        if let Some(g) = self.input {
            out.push((input, g));
        }
        if let Some(g) = self.weight {
            out.push((weight, g));
        }
        if let Some(b) = bias {
            out.push((b, self.bias));
        }
        out
    }
}

/// Gradients of a convolution. `needs = [input, weight]` skips the
/// corresponding (expensive) products when a side is constant.
pub(crate) fn backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    pad: usize,
    needs: [bool; 2],
) -> ConvGrads<T> {
    let g = Geometry::new(input.shape(), weight.shape(), stride, pad).expect("geometry validated in forward");
    let in_item = g.cin * g.h * g.w;
    let p = g.positions();
    let out_item = g.cout * p;
    let x = input.data();
    let dy = upstream.data();

    let per_item = map_indexed(g.batch, |n| {
        let xb = &x[n * in_item..(n + 1) * in_item];
        let dyb = &dy[n * out_item..(n + 1) * out_item];
        let cols_buf = (needs[1] && !g.is_pointwise()).then(|| {
            let mut cols = vec![T::zero(); g.patch() * p];
            im2col(xb, &g, &mut cols);
            cols
        });
        let cols: &[T] = cols_buf.as_deref().unwrap_or(xb);
        let dw = needs[1].then(|| {
            let mut dw = vec![T::zero(); g.cout * g.patch()];
            let dims = MatmulDims {
                m: g.cout,
                k: p,
                n: g.patch(),
                a_t: false,
                b_t: true,
            };
            T::matmul(dims, dyb, cols, &mut dw, false);
            dw
        });
        let dx = needs[0].then(|| {
            let dims = MatmulDims {
                m: g.patch(),
                k: g.cout,
                n: p,
                a_t: true,
                b_t: false,
            };
            if g.is_pointwise() {
                let mut dx = vec![T::zero(); in_item];
                T::matmul(dims, weight.data(), dyb, &mut dx, false);
                dx
            } else {
                let mut dcols = vec![T::zero(); g.patch() * p];
                T::matmul(dims, weight.data(), dyb, &mut dcols, false);
                let mut dx = vec![T::zero(); in_item];
                col2im(&dcols, &g, &mut dx);
                dx
            }
        });
        (dx, dw)
    });

    let mut dbias = vec![T::zero(); g.cout];
    for n in 0..g.batch {
        for (co, db) in dbias.iter_mut().enumerate() {
            let chunk = &dy[n * out_item + co * p..][..p];
            *db = chunk.iter().fold(*db, |acc, &v| acc + v);
        }
    }

    let mut dx_all = needs[0].then(|| Vec::with_capacity(g.batch * in_item));
    let mut dw_sum: Option<Vec<T>> = None;
    for (dx, dw) in per_item {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let Some(dw) = dw {
            match &mut dw_sum {
                None => dw_sum = Some(dw),
                Some(acc) => acc.iter_mut().zip(&dw).for_each(|(a, &b)| *a = *a + b),
            }
        }
    }

    ConvGrads {
        input: dx_all.map(|d| Tensor::new(input.shape().to_vec(), d).expect("shape")),
        weight: dw_sum.map(|d| Tensor::new(weight.shape().to_vec(), d).expect("shape")),
        bias: Tensor::new([g.cout], dbias).expect("shape"),
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of `input` (B×Cin×H×W) with `weight`
    /// (Cout×Cin×K×K) plus an optional per-channel `bias`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.record(
            out,
            &inputs,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }
}
