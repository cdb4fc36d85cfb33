//! Scalar trait and dense matrix-multiply helpers shared by the codec and
//! the model. All matrices are row-major slices.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point element type (`f32` for training and inference, `f64` for
/// gradient checks).
pub trait Float: num_traits::Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + DivAssign + 'static {
    const DTYPE: &'static str;

    fn of(v: f64) -> Self;
    fn f64(self) -> f64;

    /// `x ← eˣ` elementwise. `-inf` maps to exactly zero.
    fn exp_slice(xs: &mut [Self]) {
        xs.iter_mut().for_each(|x| *x = x.exp());
    }

    /// `C = alpha·A·B + beta·C` with arbitrary row/column strides.
    ///
    /// # Safety
    /// Pointers must address valid memory for the given shapes and strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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

impl Float for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }

    fn exp_slice(xs: &mut [f32]) {
        xs.iter_mut().for_each(|x| *x = exp_f32(*x));
    }

    unsafe fn gemm_raw(
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

impl Float for f64 {
    const DTYPE: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
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

/// Branch-free `expf` (range reduction by `ln 2` plus a degree-6
/// polynomial, ~1 ulp) that the compiler can vectorise, unlike the libm call.
#[inline(always)]
pub fn exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0; // 1.5·2²³
    let underflow = x < -87.33;
    let xc = x.clamp(-87.33, 88.37);
    let kr = xc * LOG2E + ROUND;
    let k = kr - ROUND;
    // the low mantissa bits of `kr` hold k as an integer
    let ki = kr.to_bits() as i32 - ROUND.to_bits() as i32;
    let r = xc - k * LN2_HI - k * LN2_LO;
    let p = 1.987_569_2e-4;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 5.000_000_1e-1;
    let e = p * r * r + r + 1.0;
    let scale = f32::from_bits(((ki + 127) as u32) << 23);
    let y = e * scale;
    if underflow {
        0.0
    } else {
        y
    }
}

/// Keep freed heap memory mapped.
///
/// Forward and backward passes allocate and drop tens of megabytes per call;
/// with glibc's defaults each such buffer is a fresh `mmap`, so every pass
/// pays page faults on first touch. Called once, lazily, by the model.
pub fn retain_freed_pages() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        // SAFETY: mallopt only adjusts allocator tunables.
        ONCE.call_once(|| unsafe {
            libc::mallopt(libc::M_MMAP_MAX, 0);
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        });
    }
}

/// A strided 2-D view used to describe gemm operands.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub const fn rows(cols: usize) -> View {
        View { offset: 0, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    pub const fn transposed(cols: usize) -> View {
        View { offset: 0, rs: 1, cs: cols }
    }

    pub const fn at(self, offset: usize) -> View {
        View { offset, ..self }
    }

    fn extent(&self, r: usize, c: usize) -> usize {
        if r == 0 || c == 0 {
            return 0;
        }
        self.offset + (r - 1) * self.rs + (c - 1) * self.cs + 1
    }
}

/// Checked strided gemm: `C[m×n] = alpha·A[m×k]·B[k×n] + beta·C`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Float>(m: usize, k: usize, n: usize, alpha: F, a: &[F], va: View, b: &[F], vb: View, beta: F, c: &mut [F], vc: View) {
    assert!(a.len() >= va.extent(m, k), "gemm: A too short");
    assert!(b.len() >= vb.extent(k, n), "gemm: B too short");
    assert!(c.len() >= vc.extent(m, n), "gemm: C too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c[vc.offset + i * vc.rs + j * vc.cs];
                *x = if beta == F::zero() { F::zero() } else { *x * beta };
            }
        }
        return;
    }
    // SAFETY: extents checked above; matrixmultiply reads A/B and writes C
    // only within those extents.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(va.offset),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.offset),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr().add(vc.offset),
            vc.rs as isize,
            vc.cs as isize,
        )
    }
}

/// `C = A·B (+ C if accumulate)`, A is m×k, B is k×n.
pub fn mm<F: Float>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    gemm(m, k, n, F::one(), a, View::rows(k), b, View::rows(n), beta, c, View::rows(n));
}

/// `C = Aᵀ·B (+ C)`, A stored k×m, B stored k×n.
pub fn mm_tn<F: Float>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    gemm(m, k, n, F::one(), a, View::transposed(m), b, View::rows(n), beta, c, View::rows(n));
}

/// `C = A·Bᵀ (+ C)`, A stored m×k, B stored n×k.
pub fn mm_nt<F: Float>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { F::one() } else { F::zero() };
    gemm(m, k, n, F::one(), a, View::rows(k), b, View::transposed(k), beta, c, View::rows(n));
}
