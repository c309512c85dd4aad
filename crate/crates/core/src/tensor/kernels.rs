/// `c = a·b + beta·c` for an `m×k` by `k×n` product. Operands are given as
/// `(data, row_stride, col_stride)` so transposed views need no copy.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // bounds of the strided views
    assert!((m - 1) * a.1 + (k - 1) * a.2 < a.0.len());
    assert!((k - 1) * b.1 + (n - 1) * b.2 < b.0.len());
    // SAFETY: the assertions above keep every strided access in bounds and
    // `c` is an exclusive borrow of at least m*n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
