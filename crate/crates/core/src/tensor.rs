//! Dense row-major tensors and the scalar types they are generic over.
//!
//! Image tensors use the batch × channels × height × width layout
//! throughout the crate.

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point width of a tape and everything recorded on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// 32-bit; used for training and inference.
    Single,
    /// 64-bit; used for finite-difference gradient checking.
    Double,
}

/// Element type of a [`Tensor`].
///
/// Implemented for `f32` and `f64`; the implementation selects the
/// matching GEMM kernel and the checkpoint dtype code.
pub trait Scalar: Float + Default + fmt::Debug + fmt::Display + Send + Sync + 'static {
    const PRECISION: Precision;
    const DTYPE_CODE: u8;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;

    /// `c = a · b (+ c if accumulate)` for row-major `a: m×k`, `b: k×n`,
    /// with either operand optionally read transposed.
    fn matmul(dims: MatmulDims, a: &[Self], b: &[Self], c: &mut [Self], accumulate: bool);

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

#[derive(Debug, Clone, Copy)]
pub struct MatmulDims {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// `a` is stored as k×m and read transposed.
    pub a_t: bool,
    /// `b` is stored as n×k and read transposed.
    pub b_t: bool,
}

impl MatmulDims {
    fn strides(&self) -> (isize, isize, isize, isize) {
        let (m, k, n) = (self.m as isize, self.k as isize, self.n as isize);
        let (rsa, csa) = if self.a_t { (1, m) } else { (k, 1) };
        let (rsb, csb) = if self.b_t { (1, k) } else { (n, 1) };
        (rsa, csa, rsb, csb)
    }

    fn check<T>(&self, a: &[T], b: &[T], c: &[T]) {
        assert_eq!(a.len(), self.m * self.k, "matmul lhs length");
        assert_eq!(b.len(), self.k * self.n, "matmul rhs length");
        assert_eq!(c.len(), self.m * self.n, "matmul output length");
    }
}

macro_rules! impl_scalar {
    ($t:ty, $prec:expr, $code:expr, $gemm:path) => {
        impl Scalar for $t {
            const PRECISION: Precision = $prec;
            const DTYPE_CODE: u8 = $code;
            const BYTES: usize = std::mem::size_of::<$t>();

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            fn matmul(dims: MatmulDims, a: &[Self], b: &[Self], c: &mut [Self], accumulate: bool) {
                dims.check(a, b, c);
                if dims.m == 0 || dims.n == 0 {
                    return;
                }
                if dims.k == 0 {
                    if !accumulate {
                        c.fill(0.0);
                    }
                    return;
                }
                let (rsa, csa, rsb, csb) = dims.strides();
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: lengths are checked above and the strides describe
                // dense row-major (or transposed) matrices inside them.
                unsafe {
                    $gemm(
                        dims.m,
                        dims.k,
                        dims.n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        dims.n as isize,
                        1,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(bytes);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f32, Precision::Single, 0, matrixmultiply::sgemm);
impl_scalar!(f64, Precision::Double, 1, matrixmultiply::dgemm);

/// Dense N-dimensional array, row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Dimensions of a rank-4 image tensor as `[b, c, h, w]`.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::dim(op, format!("expected rank-4 tensor, got {:?}", self.shape))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Converts element precision, rounding when narrowing.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} [", self.shape)?;
        for (i, x) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{x:?}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", …")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data_length() {
        assert!(Tensor::<f32>::new([2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::new([2, 3], vec![0.0; 5]),
            Err(Error::Dimension { .. })
        ));
        assert!(Tensor::<f32>::new([2, 0], vec![]).is_err());
    }

    #[test]
    fn matmul_transposes() {
        // a = [[1,2,3],[4,5,6]] (2×3), b = [[1,0],[0,1],[1,1]] (3×2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        let dims = MatmulDims { m: 2, k: 3, n: 2, a_t: false, b_t: false };
        f64::matmul(dims, &a, &b, &mut c, false);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);

        // Same product with both operands stored transposed.
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [1.0f64; 4];
        let dims = MatmulDims { m: 2, k: 3, n: 2, a_t: true, b_t: true };
        f64::matmul(dims, &at, &bt, &mut c2, true);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
    }

    #[test]
    fn little_endian_round_trip() {
        let mut buf = Vec::new();
        1.5f32.write_le(&mut buf);
        (-2.25f64).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf[..4]), 1.5);
        assert_eq!(f64::read_le(&buf[4..]), -2.25);
    }
}
