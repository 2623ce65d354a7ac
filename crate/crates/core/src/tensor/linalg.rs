/// A borrowed row-major matrix, optionally viewed transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    data: &'a [f64],
    /// Logical (post-transpose) extents.
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> MatRef<'a> {
    /// `rows × cols` is the stored shape; `trans` views it as `cols × rows`.
    pub(crate) fn new(data: &'a [f64], rows: usize, cols: usize, trans: bool) -> Self {
        assert!(data.len() >= rows * cols, "matrix buffer too short");
        if trans {
            Self {
                data,
                rows: cols,
                cols: rows,
                rs: 1,
                cs: cols as isize,
            }
        } else {
            Self {
                data,
                rows,
                cols,
                rs: cols as isize,
                cs: 1,
            }
        }
    }
}

/// `c = a · b + beta · c` where `c` is a contiguous row-major `m × n` buffer.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, c: &mut [f64], beta: f64) {
    assert_eq!((a.rows, a.cols), (m, k), "gemm lhs extents");
    assert_eq!((b.rows, b.cols), (k, n), "gemm rhs extents");
    assert!(c.len() >= m * n, "gemm output buffer too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    // SAFETY: extents and strides were checked against the buffer lengths above;
    // every index touched by dgemm lies within `rows * cols` of each operand.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
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

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn transposed_views_agree_with_naive() {
        let a: Vec<f64> = (0..6).map(|x| x as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|x| (x as f64).sin()).collect(); // 3x4
        let expect = naive(2, 3, 4, &a, &b);
        let mut c = vec![0.0; 8];
        gemm(2, 3, 4, MatRef::new(&a, 2, 3, false), MatRef::new(&b, 3, 4, false), &mut c, 0.0);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }
        // store a transposed (3x2) and view it back as 2x3
        let at: Vec<f64> = (0..3).flat_map(|p| (0..2).map(move |i| (i, p))).map(|(i, p)| a[i * 3 + p]).collect();
        let mut c2 = vec![0.0; 8];
        gemm(2, 3, 4, MatRef::new(&at, 3, 2, true), MatRef::new(&b, 3, 4, false), &mut c2, 0.0);
        assert_eq!(c, c2);
    }
}
