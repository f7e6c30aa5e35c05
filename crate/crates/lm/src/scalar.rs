//! Floating-point element type and row-major GEMM wrappers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

/// Element type of parameters and activations. Training runs in `f32`; the
/// gradient check runs the same code in `f64`.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `C = alpha * A·B + beta * C` on strided matrices.
    ///
    /// # Safety
    /// All strided accesses must stay inside the backing allocations.
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

    fn of(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("f64 converts to any float")
    }

    fn f64(self) -> f64 {
        <f64 as num_traits::NumCast>::from(self).expect("float converts to f64")
    }
}

impl Scalar for f32 {
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

/// A strided matrix view: `(rows, cols, row_stride, col_stride)`.
#[derive(Debug, Clone, Copy)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl Mat {
    /// Dense row-major `rows x cols`.
    pub fn rm(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, rs: cols, cs: 1 }
    }

    /// Row-major with an explicit row stride (a column block of a wider matrix).
    pub fn strided(rows: usize, cols: usize, rs: usize) -> Mat {
        Mat { rows, cols, rs, cs: 1 }
    }

    pub fn t(self) -> Mat {
        Mat {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c = alpha * a·b + beta * c` with bounds-checked views.
pub fn gemm<T: Scalar>(alpha: T, a: &[T], am: Mat, b: &[T], bm: Mat, beta: T, c: &mut [T], cm: Mat) {
    assert_eq!(am.cols, bm.rows, "inner dimensions");
    assert_eq!(am.rows, cm.rows, "output rows");
    assert_eq!(bm.cols, cm.cols, "output cols");
    assert!(a.len() >= am.extent() && b.len() >= bm.extent() && c.len() >= cm.extent());
    if cm.rows == 0 || cm.cols == 0 {
        return;
    }
    // SAFETY: extents checked above; c does not alias a or b (distinct borrows).
    unsafe {
        T::gemm_raw(
            am.rows,
            am.cols,
            bm.cols,
            alpha,
            a.as_ptr(),
            am.rs as isize,
            am.cs as isize,
            b.as_ptr(),
            bm.rs as isize,
            bm.cs as isize,
            beta,
            c.as_mut_ptr(),
            cm.rs as isize,
            cm.cs as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|x| x as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64) * 0.5 - 1.0).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(1.0, &a, Mat::rm(2, 3), &b, Mat::rm(3, 4), 2.0, &mut c, Mat::rm(2, 4));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum::<f64>() + 2.0;
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
        // (b^T)(a^T) = (ab)^T
        let mut ct = vec![0.0; 8];
        gemm(1.0, &b, Mat::rm(3, 4).t(), &a, Mat::rm(2, 3).t(), 0.0, &mut ct, Mat::rm(4, 2));
        for i in 0..2 {
            for j in 0..4 {
                assert!((ct[j * 2 + i] - (c[i * 4 + j] - 2.0)).abs() < 1e-12);
            }
        }
    }
}
