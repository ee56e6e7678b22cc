//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast, ToPrimitive};

/// Real scalar type usable for tensors, training and reconstruction.
///
/// Implemented for `f32` (training and inference) and `f64` (reconstruction
/// solves and high-precision gradient checks).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumCast
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Dtype tag used by the weight file format.
    const DTYPE: u8;
    /// Encoded width in bytes.
    const BYTES: usize;

    /// Converts an `f64` constant. Never fails for finite input.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("finite literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn push_le(self, out: &mut Vec<u8>);

    /// Decodes one value from exactly `Self::BYTES` little-endian bytes.
    fn from_le(bytes: &[u8]) -> Self;

    /// Raw strided general matrix multiply: `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// Every strided index touched for the given dimensions must lie inside
    /// the respective buffer.
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

impl Scalar for f32 {
    const DTYPE: u8 = 0;
    const BYTES: usize = 4;

    fn push_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 1;
    const BYTES: usize = 8;

    fn push_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Matrix operand orientation for [`gemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// The buffer holds the matrix row-major.
    N,
    /// The buffer holds the transpose row-major.
    T,
}

/// `C (m x n) = alpha * op(A) * op(B) + beta * C`, all buffers contiguous
/// row-major. `op(A)` is `m x k` and `op(B)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    op_a: Op,
    op_b: Op,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    let lda = if op_a == Op::N { k } else { m };
    let ldb = if op_b == Op::N { n } else { k };
    gemm_ld(op_a, op_b, m, n, k, alpha, a, lda, b, ldb, beta, c, n);
}

/// As [`gemm`] with explicit row strides (leading dimensions) for each
/// operand, so sub-blocks of larger row-major matrices can be used directly.
#[allow(clippy::too_many_arguments)]
pub fn gemm_ld<T: Scalar>(
    op_a: Op,
    op_b: Op,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Stored extents: rows x cols of the buffer as laid out in memory.
    let (a_rows, a_cols) = if op_a == Op::N { (m, k) } else { (k, m) };
    let (b_rows, b_cols) = if op_b == Op::N { (k, n) } else { (n, k) };
    let need = |rows: usize, cols: usize, ld: usize| if rows == 0 || cols == 0 { 0 } else { (rows - 1) * ld + cols };
    assert!(lda >= a_cols && a.len() >= need(a_rows, a_cols, lda), "gemm: A too small");
    assert!(ldb >= b_cols && b.len() >= need(b_rows, b_cols, ldb), "gemm: B too small");
    assert!(ldc >= n && c.len() >= need(m, n, ldc), "gemm: C too small");
    let (rsa, csa) = match op_a {
        Op::N => (lda as isize, 1),
        Op::T => (1, lda as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (ldb as isize, 1),
        Op::T => (1, ldb as isize),
    };
    // SAFETY: every index reachable through the strides was bounds-checked
    // above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
