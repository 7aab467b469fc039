use super::Real;

/// `c (+)= op(a) · op(b)`; see [`Real::gemm_raw`] for the layout.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    T::gemm_raw(m, k, n, a, a_t, b, b_t, c, accumulate)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements (checked by
    // the public entry point) and the strides describe those row-major
    // layouts, so every access stays in bounds. `c` does not alias `a`/`b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Double precision product that sums every output in ascending `k` order
/// with plain multiply-then-add, so results are reproducible against a
/// nested-loop reference bit for bit.
#[allow(clippy::too_many_arguments)]
pub(super) fn ordered_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    if !accumulate {
        c.fill(0.0);
    }
    let transposed;
    let b_rows: &[f64] = if b_t {
        let mut t = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                t[p * n + j] = b[j * k + p];
            }
        }
        transposed = t;
        &transposed
    } else {
        b
    };
    if accumulate {
        // Fresh partial sums keep the k-ordering independent of `c`.
        let mut row = vec![0.0; n];
        for i in 0..m {
            row.fill(0.0);
            for p in 0..k {
                let av = if a_t { a[p * m + i] } else { a[i * k + p] };
                let brow = &b_rows[p * n..(p + 1) * n];
                for (r, &bv) in row.iter_mut().zip(brow) {
                    *r += av * bv;
                }
            }
            for (cv, r) in c[i * n..(i + 1) * n].iter_mut().zip(&row) {
                *cv += *r;
            }
        }
    } else {
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let av = if a_t { a[p * m + i] } else { a[i * k + p] };
                let brow = &b_rows[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
}
