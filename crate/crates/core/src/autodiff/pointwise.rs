use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How `b` lines up against `a` in a binary op.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Layout {
    Same,
    /// `b` is B×1×H×W against `a` B×C×H×W.
    ChannelBroadcast { c: usize, hw: usize },
}

fn layout(op: &'static str, a: &[usize], b: &[usize]) -> Result<Layout> {
    if a == b {
        return Ok(Layout::Same);
    }
    if let ([ba, c, ha, wa], [bb, 1, hb, wb]) = (a, b) {
        if ba == bb && ha == hb && wa == wb {
            return Ok(Layout::ChannelBroadcast { c: *c, hw: ha * wa });
        }
    }
    Err(Error::dim(op, format!("incompatible shapes {a:?} and {b:?}")))
}

fn broadcast_index(layout: Layout, i: usize) -> usize {
    match layout {
        Layout::Same => i,
        Layout::ChannelBroadcast { c, hw } => (i / (c * hw)) * hw + i % hw,
    }
}

fn reduce_to<T: Scalar>(layout: Layout, shape: &[usize], full: &[T]) -> Tensor<T> {
    match layout {
        Layout::Same => Tensor::new(shape.to_vec(), full.to_vec()).expect("shape"),
        Layout::ChannelBroadcast { .. } => {
            let mut out = Tensor::zeros(shape.to_vec());
            let d = out.data_mut();
            for (i, &g) in full.iter().enumerate() {
                let j = broadcast_index(layout, i);
                d[j] = d[j] + g;
            }
            out
        }
    }
}

fn binary<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let l = layout(op, a.shape(), b.shape())?;
    let bd = b.data();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bd[broadcast_index(l, i)]))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub(crate) fn add_backward<T: Scalar>(a: Var, b: Var, b_shape: &[usize], up: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let l = layout("add", up.shape(), b_shape).expect("validated in forward");
    vec![(a, up.clone()), (b, reduce_to(l, b_shape, up.data()))]
}

pub(crate) fn mul_backward<T: Scalar>(
    a: Var,
    b: Var,
    av: &Tensor<T>,
    bv: &Tensor<T>,
    up: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let l = layout("mul", av.shape(), bv.shape()).expect("validated in forward");
    let (ad, bd, u) = (av.data(), bv.data(), up.data());
    let da: Vec<T> = (0..ad.len()).map(|i| u[i] * bd[broadcast_index(l, i)]).collect();
    let db_full: Vec<T> = (0..ad.len()).map(|i| u[i] * ad[i]).collect();
    vec![
        (a, Tensor::new(av.shape().to_vec(), da).expect("shape")),
        (b, reduce_to(l, bv.shape(), &db_full)),
    ]
}

pub(crate) fn concat_backward<T: Scalar>(a: Var, b: Var, a_shape: &[usize], up: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let [batch, c, h, w] = up.dims4("concat_channels").expect("validated in forward");
    let c1 = a_shape[1];
    let hw = h * w;
    let mut da = Vec::with_capacity(batch * c1 * hw);
    let mut db = Vec::with_capacity(batch * (c - c1) * hw);
    for item in up.data().chunks(c * hw) {
        da.extend_from_slice(&item[..c1 * hw]);
        db.extend_from_slice(&item[c1 * hw..]);
    }
    vec![
        (a, Tensor::new([batch, c1, h, w], da).expect("shape")),
        (b, Tensor::new([batch, c - c1, h, w], db).expect("shape")),
    ]
}

pub(crate) fn relu_backward<T: Scalar>(input: &Tensor<T>, up: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(up.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape")
}

pub(crate) fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, up: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(up.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("shape")
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    // Both branches keep exp() from overflowing.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn concat_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [ba, c1, ha, wa] = a.dims4("concat_channels")?;
    let [bb, c2, hb, wb] = b.dims4("concat_channels")?;
    if (ba, ha, wa) != (bb, hb, wb) {
        return Err(Error::dim(
            "concat_channels",
            format!("cannot stack {:?} with {:?}", a.shape(), b.shape()),
        ));
    }
    let hw = ha * wa;
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..ba {
        data.extend_from_slice(&a.data()[n * c1 * hw..(n + 1) * c1 * hw]);
        data.extend_from_slice(&b.data()[n * c2 * hw..(n + 1) * c2 * hw]);
    }
    Tensor::new([ba, c1 + c2, ha, wa], data)
}

impl<T: Scalar> Tape<T> {
    /// Elementwise sum; `b` may be B×1×H×W against a B×C×H×W `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.record(out, &[a, b], Op::Add { a, b }))
    }

    /// Elementwise product; `b` may be B×1×H×W against a B×C×H×W `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.record(out, &[a, b], Op::Mul { a, b }))
    }

    /// Channel-axis concatenation, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = concat_forward(self.value(a), self.value(b))?;
        Ok(self.record(out, &[a, b], Op::Concat { a, b }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|x| x.max(T::zero()));
        self.record(out, &[input], Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(sigmoid);
        self.record(out, &[input], Op::Sigmoid { input })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.record(out, &[input], Op::Sum { input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_sign_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(1.0f64) - 0.7310586).abs() < 1e-7);
        for x in [-800.0f64, -30.0, 30.0] {
            let s = sigmoid(x);
            assert!(s >= 0.0 && s <= 1.0 && s.is_finite());
        }
        let s = sigmoid(15.0f64);
        assert!(s > 0.0 && s < 1.0);
    }

    #[test]
    fn identities() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2, 1, 2], &[1.0, -2.0, 3.5, 0.0]));
        let ones = tape.constant(Tensor::ones([1, 2, 1, 2]));
        let zeros = tape.constant(Tensor::zeros([1, 2, 1, 2]));
        let m = tape.mul(x, ones).unwrap();
        let a = tape.add(x, zeros).unwrap();
        assert_eq!(tape.value(m), tape.value(x));
        assert_eq!(tape.value(a), tape.value(x));
    }

    #[test]
    fn channel_broadcast_mul() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn([2, 3, 1, 2], |i| i as f64));
        let alpha = tape.leaf(t(&[2, 1, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.mul(x, alpha).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[0.0, 2.0, 2.0, 6.0, 4.0, 10.0, 18.0, 28.0, 24.0, 36.0, 30.0, 44.0]
        );
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        // d/dalpha sums x over channels
        assert_eq!(g.get(alpha).unwrap().data(), &[6.0, 9.0, 24.0, 27.0]);
        assert_eq!(g.get(x).unwrap().data()[6..], [3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn incompatible_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros([1, 2, 2, 2]));
        let b = tape.leaf(Tensor::zeros([1, 2, 2, 1]));
        assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(tape.mul(a, b), Err(Error::Dimension { .. })));
        assert!(matches!(tape.concat_channels(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn concat_shapes_and_split() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_fn([1, 128, 32, 32], |i| i as f64));
        let b = tape.leaf(Tensor::zeros([1, 128, 32, 32]));
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.shape(c), &[1, 256, 32, 32]);
        let d = tape.concat_channels(a, a).unwrap();
        assert_eq!(tape.shape(d), &[1, 256, 32, 32]);

        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t(&[2, 1, 1, 1], &[1.0, 2.0]));
        let b = tape.leaf(t(&[2, 2, 1, 1], &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat_channels(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(t(&[2, 3, 1, 1], &[10.0, 20.0, 30.0, 40.0, 50.0, 60.0]));
        let cw = tape.mul(c, w).unwrap();
        let loss = tape.sum(cw);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[10.0, 40.0]);
        assert_eq!(g.get(b).unwrap().data(), &[20.0, 30.0, 50.0, 60.0]);
    }
}
