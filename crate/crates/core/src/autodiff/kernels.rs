//! Strided matrix-product kernels shared by the tape's forward and backward rules.

/// Row-major matrix view with an optional transpose.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    /// Contiguous row-major `rows × cols` matrix.
    pub fn dense(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn strided(data: &'a [f64], rows: usize, cols: usize, rs: usize, cs: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            rs,
            cs,
        }
    }

    pub fn t(self) -> Self {
        Mat {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn max_offset(&self) -> usize {
        (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }
}

/// `out = beta·out + a·b`, where `out` is an `a.rows × b.cols` strided block.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, out: &mut [f64], rs: usize, cs: usize, beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                out[i * rs + j * cs] *= beta;
            }
        }
        return;
    }
    assert!(a.max_offset() < a.data.len(), "gemm: lhs view out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm: rhs view out of bounds");
    assert!(
        (m - 1) * rs + (n - 1) * cs < out.len(),
        "gemm: output view out of bounds"
    );
    // SAFETY: every index reachable through the given dimensions and strides
    // was bounds-checked against its slice above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            out.as_mut_ptr(),
            rs as isize,
            cs as isize,
        );
    }
}

/// Dense `out (+)= a·b`.
pub(crate) fn matmul_into(a: Mat<'_>, b: Mat<'_>, out: &mut [f64], accumulate: bool) {
    let n = b.cols;
    gemm(a, b, out, n, 1, if accumulate { 1.0 } else { 0.0 });
}
