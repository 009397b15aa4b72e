//! Thin safe wrapper over `matrixmultiply::dgemm` for dense row-major buffers.

/// Matrix view: buffer plus (row stride, column stride).
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        Self { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }
}

/// `c = alpha * a * b + beta * c`, with `c` dense row-major `a.rows x b.cols`.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: strides describe in-bounds elements of the asserted buffer sizes,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_product() {
        let a: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|i| (i as f64) * 0.5 - 2.0).collect(); // 3x4
        let mut c = vec![1.0; 8];
        gemm(1.0, View::row_major(&a, 2, 3), View::row_major(&b, 3, 4), 1.0, &mut c);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 4 + j]).sum::<f64>() + 1.0;
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
        // transposed operand
        let mut ct = vec![0.0; 9];
        gemm(1.0, View::row_major(&a, 2, 3).t(), View::row_major(&a, 2, 3), 0.0, &mut ct);
        for i in 0..3 {
            for j in 0..3 {
                let want: f64 = (0..2).map(|k| a[k * 3 + i] * a[k * 3 + j]).sum();
                assert!((ct[i * 3 + j] - want).abs() < 1e-12);
            }
        }
    }
}
