//! Dense row-major kernels. Reductions use eight independent accumulators so
//! the compiler can vectorize them without reassociating floats.

use super::Real;

const LANES: usize = 8;

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..LANES {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    let mut s = T::zero();
    for v in acc {
        s = s + v;
    }
    s + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `out = x · w` with `x: rows×inner`, `w: inner×cols`.
pub(crate) fn matmul<T: Real>(x: &[T], w: &[T], rows: usize, inner: usize, cols: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), rows * inner);
    debug_assert_eq!(w.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    out.fill(T::zero());
    for (xr, or) in x.chunks_exact(inner).zip(out.chunks_exact_mut(cols)) {
        for (&xv, wr) in xr.iter().zip(w.chunks_exact(cols)) {
            axpy(xv, wr, or);
        }
    }
}

/// `out += dy · wᵀ` with `dy: rows×cols`, `w: inner×cols`, `out: rows×inner`.
pub(crate) fn matmul_wt_acc<T: Real>(dy: &[T], w: &[T], rows: usize, inner: usize, cols: usize, out: &mut [T]) {
    debug_assert_eq!(dy.len(), rows * cols);
    debug_assert_eq!(w.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * inner);
    for (dr, or) in dy.chunks_exact(cols).zip(out.chunks_exact_mut(inner)) {
        for (o, wr) in or.iter_mut().zip(w.chunks_exact(cols)) {
            *o = *o + dot(dr, wr);
        }
    }
}

/// `dw += xᵀ · dy` with `x: rows×inner`, `dy: rows×cols`, `dw: inner×cols`.
pub(crate) fn matmul_xt_acc<T: Real>(x: &[T], dy: &[T], rows: usize, inner: usize, cols: usize, dw: &mut [T]) {
    debug_assert_eq!(x.len(), rows * inner);
    debug_assert_eq!(dy.len(), rows * cols);
    debug_assert_eq!(dw.len(), inner * cols);
    for (xr, dr) in x.chunks_exact(inner).zip(dy.chunks_exact(cols)) {
        for (&xv, wr) in xr.iter().zip(dw.chunks_exact_mut(cols)) {
            axpy(xv, dr, wr);
        }
    }
}

/// Column sums of `x: rows×cols` added into `out`.
pub(crate) fn col_sum_acc<T: Real>(x: &[T], cols: usize, out: &mut [T]) {
    for r in x.chunks_exact(cols) {
        axpy(T::one(), r, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], w: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                for k in 0..inner {
                    out[i * cols + j] += x[i * inner + k] * w[k * cols + j];
                }
            }
        }
        out
    }

    fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; m.len()];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = m[i * cols + j];
            }
        }
        t
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7 + 3) % 11) as f64 * scale - 0.4).collect()
    }

    #[test]
    fn kernels_match_naive_products() {
        let (r, n, c) = (3, 13, 5);
        let x = seq(r * n, 0.1);
        let w = seq(n * c, 0.07);
        let mut out = vec![0.0; r * c];
        matmul(&x, &w, r, n, c, &mut out);
        let expect = naive(&x, &w, r, n, c);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }

        let dy = seq(r * c, 0.05);
        let mut dx = vec![0.0; r * n];
        matmul_wt_acc(&dy, &w, r, n, c, &mut dx);
        let expect = naive(&dy, &transpose(&w, n, c), r, c, n);
        for (a, b) in dx.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut dw = vec![0.0; n * c];
        matmul_xt_acc(&x, &dy, r, n, c, &mut dw);
        let expect = naive(&transpose(&x, r, n), &dy, n, r, c);
        for (a, b) in dw.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_handles_remainders() {
        for n in 0..20 {
            let a = seq(n, 0.3);
            let b = seq(n, 0.2);
            let expect: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((dot(&a, &b) - expect).abs() < 1e-12);
        }
    }
}
