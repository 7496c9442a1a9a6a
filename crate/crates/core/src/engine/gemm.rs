//! Bounds-checked strided matrix multiply.

/// A strided matrix view: element `(r, c)` lives at `offset + r·row + c·col`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Layout {
    pub offset: usize,
    pub row: usize,
    pub col: usize,
}

impl Layout {
    pub fn new(offset: usize, row: usize, col: usize) -> Self {
        Self { offset, row, col }
    }

    fn last(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.row + (cols - 1) * self.col
    }
}

/// `C ← A·B + beta·C` where `A` is `m×k`, `B` is `k×n` and `C` is `m×n`.
///
/// `C` must not alias itself across distinct `(r, c)` positions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    beta: f64,
    c: &mut [f64],
    lc: Layout,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for r in 0..m {
            for j in 0..n {
                let idx = lc.offset + r * lc.row + j * lc.col;
                c[idx] *= beta;
            }
        }
        return;
    }
    assert!(la.last(m, k) < a.len(), "gemm: A view out of bounds");
    assert!(lb.last(k, n) < b.len(), "gemm: B view out of bounds");
    assert!(lc.last(m, n) < c.len(), "gemm: C view out of bounds");
    assert!(
        n == 1 || m == 1 || (lc.col != 0 && lc.row != 0 && lc.row != lc.col),
        "gemm: C view aliases"
    );
    // SAFETY: every element touched by the kernel lies within the slices
    // (checked above), strides are non-negative and fit in isize because they
    // index into live allocations.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(la.offset),
            la.row as isize,
            la.col as isize,
            b.as_ptr().add(lb.offset),
            lb.row as isize,
            lb.col as isize,
            beta,
            c.as_mut_ptr().add(lc.offset),
            lc.row as isize,
            lc.col as isize,
        );
    }
}
