//! Scalar abstraction over `f32`/`f64`.
//!
//! The pipeline runs in `f32`; the finite-difference gradient oracle runs the
//! same layer code in `f64` so the difference quotient is well conditioned.
//! Transcendentals go through `libm` for bit-identical results everywhere.

use core::fmt::Debug;
use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + Clone
    + Debug
    + PartialOrd
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn erf(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;

    /// Eight-lane split dot product. The default is a plain loop the
    /// compiler may or may not vectorize; f32 overrides it with explicit
    /// SSE2 on x86-64 (bit-identical lane arithmetic, no FMA contraction)
    /// because relying on the auto-vectorizer proved flaky across link
    /// units.
    #[inline]
    fn dot_slices(a: &[Self], b: &[Self]) -> Self {
        dot_portable(a, b)
    }

    /// out[i] += s * row[i]; same portability note as [`Real::dot_slices`].
    #[inline]
    fn saxpy(out: &mut [Self], s: Self, row: &[Self]) {
        saxpy_portable(out, s, row);
    }
}

pub(crate) const DOT_LANES: usize = 8;

#[inline]
pub(crate) fn dot_portable<S: Real>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [S::ZERO; DOT_LANES];
    let chunks = a.len() / DOT_LANES;
    for c in 0..chunks {
        let base = c * DOT_LANES;
        for l in 0..DOT_LANES {
            lanes[l] += a[base + l] * b[base + l];
        }
    }
    let mut tail = S::ZERO;
    for i in chunks * DOT_LANES..a.len() {
        tail += a[i] * b[i];
    }
    let mut acc = S::ZERO;
    for l in 0..DOT_LANES {
        acc += lanes[l];
    }
    acc + tail
}

#[inline]
pub(crate) fn saxpy_portable<S: Real>(out: &mut [S], s: S, row: &[S]) {
    debug_assert_eq!(out.len(), row.len());
    for (o, r) in out.iter_mut().zip(row.iter()) {
        *o += s * *r;
    }
}

#[cfg(target_arch = "x86_64")]
mod sse {
    /// Explicit x86-64 versions of the two hot kernels: SSE2 baseline with
    /// an AVX2 variant picked once at runtime when std is available.
    /// Lane-for-lane the arithmetic matches the portable forms (separate
    /// multiply and add, eight fixed accumulator lanes), so every path is
    /// bit-identical across instruction sets and architectures.
    use core::arch::x86_64::*;

    #[cfg(feature = "std")]
    fn avx2_available() -> bool {
        use core::sync::atomic::{AtomicU8, Ordering};
        static STATE: AtomicU8 = AtomicU8::new(0);
        match STATE.load(Ordering::Relaxed) {
            2 => true,
            1 => false,
            _ => {
                let yes = std::arch::is_x86_feature_detected!("avx2");
                STATE.store(if yes { 2 } else { 1 }, Ordering::Relaxed);
                yes
            }
        }
    }

    #[cfg(not(feature = "std"))]
    fn avx2_available() -> bool {
        cfg!(target_feature = "avx2")
    }

    #[target_feature(enable = "avx2")]
    unsafe fn dot_avx2(a: &[f32], b: &[f32]) -> f32 {
        let chunks = a.len() / 8;
        let mut acc = _mm256_setzero_ps();
        let pa = a.as_ptr();
        let pb = b.as_ptr();
        for c in 0..chunks {
            let i = c * 8;
            let av = _mm256_loadu_ps(pa.add(i));
            let bv = _mm256_loadu_ps(pb.add(i));
            acc = _mm256_add_ps(acc, _mm256_mul_ps(av, bv));
        }
        let mut lanes = [0.0f32; 8];
        _mm256_storeu_ps(lanes.as_mut_ptr(), acc);
        let mut tail = 0.0f32;
        for i in chunks * 8..a.len() {
            tail += a[i] * b[i];
        }
        let mut sum = 0.0f32;
        for l in lanes {
            sum += l;
        }
        sum + tail
    }

    #[target_feature(enable = "avx2")]
    unsafe fn saxpy_avx2(out: &mut [f32], s: f32, row: &[f32]) {
        let chunks = out.len() / 8;
        let sv = _mm256_set1_ps(s);
        let po = out.as_mut_ptr();
        let pr = row.as_ptr();
        for c in 0..chunks {
            let i = c * 8;
            let ov = _mm256_loadu_ps(po.add(i));
            let rv = _mm256_loadu_ps(pr.add(i));
            _mm256_storeu_ps(po.add(i), _mm256_add_ps(ov, _mm256_mul_ps(sv, rv)));
        }
        for i in chunks * 8..out.len() {
            out[i] += s * row[i];
        }
    }

    #[inline]
    pub fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
        debug_assert_eq!(a.len(), b.len());
        if avx2_available() {
            // safety: feature checked; loads stay inside the slices
            return unsafe { dot_avx2(a, b) };
        }
        let chunks = a.len() / 8;
        unsafe {
            let mut acc0 = _mm_setzero_ps();
            let mut acc1 = _mm_setzero_ps();
            let pa = a.as_ptr();
            let pb = b.as_ptr();
            for c in 0..chunks {
                let i = c * 8;
                let a0 = _mm_loadu_ps(pa.add(i));
                let b0 = _mm_loadu_ps(pb.add(i));
                acc0 = _mm_add_ps(acc0, _mm_mul_ps(a0, b0));
                let a1 = _mm_loadu_ps(pa.add(i + 4));
                let b1 = _mm_loadu_ps(pb.add(i + 4));
                acc1 = _mm_add_ps(acc1, _mm_mul_ps(a1, b1));
            }
            let mut lanes = [0.0f32; 8];
            _mm_storeu_ps(lanes.as_mut_ptr(), acc0);
            _mm_storeu_ps(lanes.as_mut_ptr().add(4), acc1);
            let mut tail = 0.0f32;
            for i in chunks * 8..a.len() {
                tail += a[i] * b[i];
            }
            let mut sum = 0.0f32;
            for l in lanes {
                sum += l;
            }
            sum + tail
        }
    }

    #[inline]
    pub fn saxpy_f32(out: &mut [f32], s: f32, row: &[f32]) {
        debug_assert_eq!(out.len(), row.len());
        if avx2_available() {
            return unsafe { saxpy_avx2(out, s, row) };
        }
        let chunks = out.len() / 8;
        unsafe {
            let sv = _mm_set1_ps(s);
            let po = out.as_mut_ptr();
            let pr = row.as_ptr();
            for c in 0..chunks {
                let i = c * 8;
                let o0 = _mm_loadu_ps(po.add(i));
                let r0 = _mm_loadu_ps(pr.add(i));
                _mm_storeu_ps(po.add(i), _mm_add_ps(o0, _mm_mul_ps(sv, r0)));
                let o1 = _mm_loadu_ps(po.add(i + 4));
                let r1 = _mm_loadu_ps(pr.add(i + 4));
                _mm_storeu_ps(po.add(i + 4), _mm_add_ps(o1, _mm_mul_ps(sv, r1)));
            }
            for i in chunks * 8..out.len() {
                out[i] += s * row[i];
            }
        }
    }

}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    #[inline]
    fn abs(self) -> Self {
        libm::fabsf(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrtf(self)
    }
    #[inline]
    fn exp(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::logf(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        libm::tanhf(self)
    }
    #[inline]
    fn erf(self) -> Self {
        libm::erff(self)
    }
    #[inline]
    fn maximum(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn minimum(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }

    #[cfg(target_arch = "x86_64")]
    #[inline]
    fn dot_slices(a: &[Self], b: &[Self]) -> Self {
        sse::dot_f32(a, b)
    }

    #[cfg(target_arch = "x86_64")]
    #[inline]
    fn saxpy(out: &mut [Self], s: Self, row: &[Self]) {
        sse::saxpy_f32(out, s, row);
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn abs(self) -> Self {
        libm::fabs(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        libm::tanh(self)
    }
    #[inline]
    fn erf(self) -> Self {
        libm::erf(self)
    }
    #[inline]
    fn maximum(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn minimum(self, other: Self) -> Self {
        if self < other {
            self
        } else {
            other
        }
    }
}

/// Standard normal CDF, used by the exact GELU.
#[inline]
pub fn gauss_cdf<S: Real>(x: S) -> S {
    let half = S::from_f64(0.5);
    let inv_sqrt2 = S::from_f64(core::f64::consts::FRAC_1_SQRT_2);
    half * (S::ONE + (x * inv_sqrt2).erf())
}

/// Standard normal PDF.
#[inline]
pub fn gauss_pdf<S: Real>(x: S) -> S {
    let c = S::from_f64(1.0 / libm::sqrt(2.0 * core::f64::consts::PI));
    c * (-(x * x) * S::from_f64(0.5)).exp()
}
