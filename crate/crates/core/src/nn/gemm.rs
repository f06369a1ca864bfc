//! Thin safe wrapper over `matrixmultiply::sgemm`.

/// Strided view of a row-major matrix inside a slice.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Layout {
    /// Dense row-major matrix with `cols` columns.
    pub fn rows(cols: usize) -> Self {
        Self {
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a dense row-major matrix that has `stored_cols` columns.
    pub fn transposed(stored_cols: usize) -> Self {
        Self {
            row_stride: 1,
            col_stride: stored_cols,
        }
    }

    fn extent(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row_stride + (cols - 1) * self.col_stride + 1
        }
    }
}

/// `c = a * b + beta * c` with `a` m×k, `b` k×n and `c` m×n, each described by
/// a [`Layout`] over its slice.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    la: Layout,
    b: &[f32],
    lb: Layout,
    beta: f32,
    c: &mut [f32],
    lc: Layout,
) {
    assert!(a.len() >= la.extent(m, k), "gemm: a too small");
    assert!(b.len() >= lb.extent(k, n), "gemm: b too small");
    assert!(c.len() >= lc.extent(m, n), "gemm: c too small");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every addressed element lies inside the slices (checked above).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr(),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            lc.row_stride as isize,
            lc.col_stride as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f32], at: bool, b: &[f32], bt: bool) -> Vec<f32> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if at { a[p * m + i] } else { a[i * k + p] };
                    let bv = if bt { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_for_all_transposes() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f32> = (0..m * k).map(|v| (v as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|v| (v as f32 * 0.11).cos()).collect();
        for at in [false, true] {
            for bt in [false, true] {
                let la = if at { Layout::transposed(m) } else { Layout::rows(k) };
                let lb = if bt { Layout::transposed(k) } else { Layout::rows(n) };
                let mut c = vec![0.0; m * n];
                sgemm(m, k, n, &a, la, &b, lb, 0.0, &mut c, Layout::rows(n));
                let r = naive(m, k, n, &a, at, &b, bt);
                for (x, y) in c.iter().zip(&r) {
                    assert!((x - y).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn writes_into_strided_block() {
        // 2x2 product written into columns 1..3 of a 2x4 buffer.
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 0.0, 0.0, 1.0];
        let mut c = [9.0; 8];
        sgemm(2, 2, 2, &a, Layout::rows(2), &b, Layout::rows(2), 0.0, &mut c[1..], Layout::rows(4));
        assert_eq!(c, [9.0, 1.0, 2.0, 9.0, 9.0, 3.0, 4.0, 9.0]);
    }
}
