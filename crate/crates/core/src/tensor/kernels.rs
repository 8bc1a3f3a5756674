//! Dense inner loops shared by forward and backward passes.

use crate::scalar::Scalar;

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `out = A x` for row-major `A: [rows, cols]`.
pub fn matvec<T: Scalar>(a: &[T], rows: usize, cols: usize, x: &[T], out: &mut [T]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&a[r * cols..(r + 1) * cols], x);
    }
}

/// `out += A^T y` for row-major `A: [rows, cols]`.
pub fn matvec_t_acc<T: Scalar>(a: &[T], rows: usize, cols: usize, y: &[T], out: &mut [T]) {
    for r in 0..rows {
        if y[r] != T::zero() {
            axpy(y[r], &a[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `out += u v^T` for `out: [u.len(), v.len()]`.
pub fn outer_acc<T: Scalar>(u: &[T], v: &[T], out: &mut [T]) {
    let cols = v.len();
    for (r, &ur) in u.iter().enumerate() {
        if ur != T::zero() {
            axpy(ur, v, &mut out[r * cols..(r + 1) * cols]);
        }
    }
}

/// `C = A B` with `A: [m, k]`, `B: [k, n]`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip != T::zero() {
                axpy(aip, &b[p * n..(p + 1) * n], ci);
            }
        }
    }
    c
}

/// Numerically stable softmax of `x` into `out`, skipping entries where `mask` is set.
pub fn softmax_into<T: Scalar>(x: &[T], mask: Option<&[bool]>, out: &mut [T]) {
    let live = |i: usize| mask.is_none_or(|m| !m[i]);
    let mut max = T::neg_infinity();
    for (i, &v) in x.iter().enumerate() {
        if live(i) && v > max {
            max = v;
        }
    }
    let mut total = T::zero();
    for (i, (o, &v)) in out.iter_mut().zip(x).enumerate() {
        if live(i) {
            *o = (v - max).exp();
            total += *o;
        } else {
            *o = T::zero();
        }
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Backward of a softmax row: `dx = y * (dy - <dy, y>)`, accumulated.
pub fn softmax_backward_acc<T: Scalar>(y: &[T], dy: &[T], dx: &mut [T]) {
    let inner = dot(dy, y);
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *d += yi * (gi - inner);
    }
}
