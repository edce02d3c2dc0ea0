//! Thin safe wrapper over `matrixmultiply::dgemm`.

/// Row/column strides of an operand, in elements.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rs: isize,
    pub cs: isize,
}

impl Layout {
    /// Plain row-major `rows × cols`.
    pub fn row_major(cols: usize) -> Self {
        Self {
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a row-major matrix that has `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        Self {
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c ← beta·c + a·b` with `a: m×k`, `b: k×n`, `c: m×n` row-major.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    let span = |rows: usize, cols: usize, l: Layout| {
        if rows == 0 || cols == 0 {
            0
        } else {
            ((rows - 1) as isize * l.rs + (cols - 1) as isize * l.cs) as usize + 1
        }
    };
    assert!(a.len() >= span(m, k, la));
    assert!(b.len() >= span(k, n, lb));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every access of the three operands.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
