//! Dense row-major tensors and the small set of kernels the layers need.
//!
//! Kernels are written so LLVM can vectorize them without changing the
//! floating-point association order: `saxpy_into` keeps the reduction on the
//! output axis (independent lanes), and `dot` splits the accumulator into a
//! fixed number of lanes folded in a fixed order. Results are therefore
//! bit-identical across runs, thread counts and SIMD widths.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::scalar::Real;

#[derive(Clone, PartialEq)]
pub struct Tensor<S: Real = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TensorError {
    /// data length does not match the product of the extents
    ShapeMismatch { expected: usize, got: usize },
    /// a NaN or infinity was produced
    NonFinite,
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected} values, got {got}")
            }
            TensorError::NonFinite => write!(f, "non-finite value"),
        }
    }
}

impl core::error::Error for TensorError {}

impl<S: Real> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{:?}, ...]", &self.data[..8])
        }
    }
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::ZERO; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Reinterpret with a new shape of the same element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn check_finite(&self) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite)
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn fill(&mut self, value: S) {
        for v in &mut self.data {
            *v = value;
        }
    }

    /// self += other (shapes must match).
    pub fn add_assign(&mut self, other: &Tensor<S>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
    }

    /// self += scale * other.
    pub fn add_scaled(&mut self, other: &Tensor<S>, scale: S) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * *b;
        }
    }

    pub fn scale(&mut self, factor: S) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn convert<T: Real>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for v in &self.data {
            let x = v.to_f64();
            acc += x * x;
        }
        libm::sqrt(acc)
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for v in &self.data {
            let a = v.to_f64().abs();
            if a > m {
                m = a;
            }
        }
        m
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.data.len() {
            if self.data[i] > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// Dot product with a fixed 8-lane accumulator split; dispatches to the
/// scalar type's kernel (explicit SSE2 on x86-64 f32).
#[inline]
pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    S::dot_slices(a, b)
}

/// out[j] += s * row[j]; the core of the matmul kernels.
#[inline]
pub fn saxpy_into<S: Real>(out: &mut [S], s: S, row: &[S]) {
    S::saxpy(out, s, row);
}

/// out[m..] += x[k] * w[k, ...]  with w stored row-major [k_dim, out_dim].
///
/// Computes x^T W for a single vector x: the classic "weights indexed by
/// input" layout so the inner loop runs over contiguous memory.
pub fn vec_mat<S: Real>(x: &[S], w: &[S], out: &mut [S]) {
    let out_dim = out.len();
    debug_assert_eq!(x.len() * out_dim, w.len());
    for (k, &xv) in x.iter().enumerate() {
        if xv == S::ZERO {
            continue;
        }
        saxpy_into(out, xv, &w[k * out_dim..(k + 1) * out_dim]);
    }
}

/// out[k] += dot(w[k, ...], dy): the transpose product W dy for w stored
/// [k_dim, out_dim].
pub fn mat_vec_t<S: Real>(w: &[S], dy: &[S], out: &mut [S]) {
    let out_dim = dy.len();
    debug_assert_eq!(out.len() * out_dim, w.len());
    for (k, o) in out.iter_mut().enumerate() {
        *o += dot(&w[k * out_dim..(k + 1) * out_dim], dy);
    }
}

/// dw[k, j] += x[k] * dy[j], the outer-product accumulation for weight grads.
pub fn outer_acc<S: Real>(dw: &mut [S], x: &[S], dy: &[S]) {
    let out_dim = dy.len();
    debug_assert_eq!(x.len() * out_dim, dw.len());
    for (k, &xv) in x.iter().enumerate() {
        if xv == S::ZERO {
            continue;
        }
        saxpy_into(&mut dw[k * out_dim..(k + 1) * out_dim], xv, dy);
    }
}

/// Row-tile size for the blocked matmul kernels: keeps a tile of C hot
/// while each B row streams exactly once per tile.
const ROW_TILE: usize = 32;

/// c[m, n] += a[m, k] * b[k, n], all row-major. Blocked over row tiles with
/// the k loop outermost inside a tile, so the accumulation order per output
/// element is a fixed ascending k regardless of tiling.
pub fn matmul_acc<S: Real>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut i0 = 0;
    while i0 < m {
        let i1 = (i0 + ROW_TILE).min(m);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            for i in i0..i1 {
                let av = a[i * k + p];
                if av != S::ZERO {
                    saxpy_into(&mut c[i * n..(i + 1) * n], av, brow);
                }
            }
        }
        i0 = i1;
    }
}

/// c[k, n] += a^T b for a[m, k], b[m, n]: the weight-gradient accumulation
/// c[k] += sum_m a[m, k] * b[m]. Blocked over m tiles; per (k, n) cell the
/// m order stays globally ascending.
pub fn matmul_atb_acc<S: Real>(c: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    let mut m0 = 0;
    while m0 < m {
        let m1 = (m0 + ROW_TILE).min(m);
        for p in 0..k {
            let crow = &mut c[p * n..(p + 1) * n];
            for i in m0..m1 {
                let av = a[i * k + p];
                if av != S::ZERO {
                    saxpy_into(crow, av, &b[i * n..(i + 1) * n]);
                }
            }
        }
        m0 = m1;
    }
}

/// c[m, k] += a b^T for a[m, n], b[k, n]: the input-gradient product
/// c[m, p] += dot(a[m, :], b[p, :]). Blocked over m tiles so each b row is
/// streamed once per tile.
pub fn matmul_abt_acc<S: Real>(c: &mut [S], a: &[S], b: &[S], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    let mut m0 = 0;
    while m0 < m {
        let m1 = (m0 + ROW_TILE).min(m);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            for i in m0..m1 {
                c[i * k + p] += dot(&a[i * n..(i + 1) * n], brow);
            }
        }
        m0 = m1;
    }
}
