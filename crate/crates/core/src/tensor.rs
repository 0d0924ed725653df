//! Dense row-major tensors.
//!
//! A [`Tensor`] is a shape plus a flat buffer. Image batches use NCHW layout
//! throughout the crate. The element type is generic over [`Scalar`] so the
//! same layer code runs in `f32` for training and `f64` for gradient checks.

use std::fmt::Debug;
use std::iter::Sum;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};

/// Floating point element type usable in tensors.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for strided row/column views.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` views, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Matrix operand for [`gemm`]: a row-major `(rows, cols)` buffer, optionally
/// read transposed.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a * b + beta * out` where `out` is row-major `(m, n)`.
///
/// Panics on inconsistent dimensions; callers validate shapes first.
pub fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(out.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: dimensions and buffer lengths checked above; `out` is a unique borrow.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMode {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field(
                "data",
                &format_args!(
                    "{preview:?}{}",
                    if self.data.len() > 8 { "..." } else { "" }
                ),
            )
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return shape_err(format!("dimensions must be positive, got {shape:?}"));
        }
        if numel(shape) != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {} elements but {} were supplied",
                numel(shape),
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            shape.iter().all(|&d| d > 0),
            "dimensions must be positive: {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn reshape(self, new_shape: &[usize]) -> Result<Self> {
        if new_shape.contains(&0) || numel(new_shape) != self.data.len() {
            return shape_err(format!(
                "cannot reshape {:?} into {new_shape:?}",
                self.shape
            ));
        }
        Ok(Self {
            shape: new_shape.to_vec(),
            data: self.data,
        })
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 2 || other.rank() != 2 {
            return shape_err(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            ));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return shape_err(format!("matmul inner dimension {k} != {k2}"));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            MatRef::new(&self.data, m, k),
            MatRef::new(&other.data, k2, n),
            T::zero(),
            &mut out,
        );
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Reduces over `axes`, dropping them from the shape. Reducing every
    /// axis yields a shape-`[1]` tensor.
    pub fn reduce(&self, axes: &[usize], mode: ReduceMode) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return shape_err(format!("axis {a} out of range for rank {rank}"));
            }
            if reduced[a] {
                return shape_err(format!("axis {a} given twice"));
            }
            reduced[a] = true;
        }
        let out_shape: Vec<usize> = (0..rank)
            .filter(|&i| !reduced[i])
            .map(|i| self.shape[i])
            .collect();
        let out_len = numel(&out_shape);
        let init = match mode {
            ReduceMode::Max => T::neg_infinity(),
            _ => T::zero(),
        };
        let mut out = vec![init; out_len];

        let mut strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        let mut out_strides = vec![0usize; rank];
        let mut s = 1;
        for i in (0..rank).rev() {
            if !reduced[i] {
                out_strides[i] = s;
                s *= self.shape[i];
            }
        }
        for (flat, &v) in self.data.iter().enumerate() {
            let mut o = 0;
            for i in 0..rank {
                o += ((flat / strides[i]) % self.shape[i]) * out_strides[i];
            }
            match mode {
                ReduceMode::Max => {
                    if v > out[o] {
                        out[o] = v;
                    }
                }
                _ => out[o] += v,
            }
        }
        if mode == ReduceMode::Mean {
            let count = T::from_f64((self.data.len() / out_len.max(1)) as f64);
            for v in &mut out {
                *v /= count;
            }
        }
        let out_shape = if out_shape.is_empty() {
            vec![1]
        } else {
            out_shape
        };
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape != other.shape {
            return shape_err(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Tensor<T> {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => arg_err(format!("{what}: non-finite value at flat index {i}")),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().to_f64())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn flatten_block_output() {
        let x = Tensor::<f32>::zeros(&[1, 1024, 2, 2]);
        let y = x.reshape(&[1, 4096]).unwrap();
        assert_eq!(y.shape(), &[1, 4096]);
    }

    #[test]
    fn reshape_same_shape_is_identity() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(x.clone().reshape(&[2, 3]).unwrap(), x);
    }

    #[test]
    fn reshape_count_mismatch() {
        let x = t(&[2, 3], &[0.; 6]);
        assert!(matches!(x.reshape(&[4, 2]), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn matmul_identity_and_hand_value() {
        let m = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(Tensor::identity(3).matmul(&m).unwrap(), m);
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[5., 6.]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[17., 39.]);
        assert!(a.matmul(&m).is_err());
    }

    #[test]
    fn dense_shaped_matmul() {
        let x = Tensor::<f32>::zeros(&[90, 4096]);
        let w = Tensor::<f32>::zeros(&[4096, 256]);
        assert_eq!(x.matmul(&w).unwrap().shape(), &[90, 256]);
    }

    #[test]
    fn gemm_transposed_views() {
        // a^T b with a = [[1,2],[3,4]] -> [[1,3],[2,4]] * [[1],[1]] = [[4],[6]]
        let a = [1.0f64, 2., 3., 4.];
        let b = [1.0f64, 1.];
        let mut out = [0.0; 2];
        gemm(
            MatRef::new(&a, 2, 2).t(),
            MatRef::new(&b, 2, 1),
            0.0,
            &mut out,
        );
        assert_eq!(out, [4., 6.]);
    }

    #[test]
    fn reduce_examples() {
        let v = t(&[3], &[1., 2., 3.]);
        assert_eq!(v.reduce(&[0], ReduceMode::Mean).unwrap().data(), &[2.]);
        let z = Tensor::<f64>::zeros(&[4, 5]);
        assert_eq!(z.reduce(&[0, 1], ReduceMode::Sum).unwrap().data(), &[0.]);
        let m = t(&[2, 2], &[1., 5., 3., 2.]);
        assert_eq!(m.reduce(&[1], ReduceMode::Max).unwrap().data(), &[5., 3.]);
        assert_eq!(m.reduce(&[0], ReduceMode::Sum).unwrap().data(), &[4., 7.]);
        assert!(m.reduce(&[2], ReduceMode::Sum).is_err());
    }

    #[test]
    fn reduce_middle_axis() {
        let x = t(&[2, 3, 2], &(0..12).map(|v| v as f64).collect::<Vec<_>>());
        let r = x.reduce(&[1], ReduceMode::Sum).unwrap();
        assert_eq!(r.shape(), &[2, 2]);
        assert_eq!(r.data(), &[6., 9., 24., 27.]);
    }

    #[test]
    fn check_finite_flags_nan() {
        let x = t(&[2], &[1.0, f64::NAN]);
        assert!(x.check_finite("x").is_err());
        assert!(!x.all_finite());
    }

    #[test]
    fn matmul_associative_f32() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let mk = |r: &mut Rng, a, b| {
                Tensor::<f32>::from_vec(&[a, b], r.uniform_vec::<f32>(-1.0, 1.0, a * b).unwrap())
                    .unwrap()
            };
            let a = mk(&mut rng, 4, 5);
            let b = mk(&mut rng, 5, 3);
            let c = mk(&mut rng, 3, 6);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                assert!((x - y).abs() <= 1e-5 * x.abs().max(y.abs()).max(1.0));
            }
        }
    }

    proptest! {
        #[test]
        fn reshape_round_trip(dims in proptest::collection::vec(1usize..5, 1..4)) {
            let n: usize = dims.iter().product();
            let x = Tensor::<f64>::from_vec(&dims, (0..n).map(|v| v as f64).collect()).unwrap();
            let y = x.clone().reshape(&[n]).unwrap().reshape(&dims).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn mean_times_count_is_sum(data in proptest::collection::vec(-100.0f64..100.0, 1..64)) {
            let n = data.len();
            let x = Tensor::from_vec(&[n], data).unwrap();
            let s = x.reduce(&[0], ReduceMode::Sum).unwrap().data()[0];
            let m = x.reduce(&[0], ReduceMode::Mean).unwrap().data()[0];
            prop_assert!((m * n as f64 - s).abs() <= 1e-6 * s.abs().max(1.0));
        }
    }
}
