//! Dense row-major helpers shared by the forward and backward passes.

use crate::Real;

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `y += alpha * x`
#[inline]
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// `out = m · x` for an `rows × cols` matrix.
pub fn matvec<F: Real>(m: &[F], rows: usize, cols: usize, x: &[F], out: &mut [F]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&m[r * cols..(r + 1) * cols], x);
    }
}

/// `out += mᵀ · y` for an `rows × cols` matrix.
pub fn matvec_t_acc<F: Real>(m: &[F], rows: usize, cols: usize, y: &[F], out: &mut [F]) {
    debug_assert_eq!(y.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for (r, &yr) in y.iter().enumerate() {
        if yr != F::zero() {
            axpy(yr, &m[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `out = x · m` for a row vector `x` and an `rows × cols` matrix.
pub fn vecmat<F: Real>(x: &[F], m: &[F], rows: usize, cols: usize, out: &mut [F]) {
    debug_assert_eq!(x.len(), rows);
    out[..cols].iter_mut().for_each(|o| *o = F::zero());
    for (r, &xr) in x.iter().enumerate() {
        axpy(xr, &m[r * cols..(r + 1) * cols], &mut out[..cols]);
    }
}

/// `g += y ⊗ x`, i.e. `g[r][c] += y[r] * x[c]`.
pub fn outer_acc<F: Real>(g: &mut [F], y: &[F], x: &[F]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), y.len() * cols);
    for (r, &yr) in y.iter().enumerate() {
        if yr != F::zero() {
            axpy(yr, x, &mut g[r * cols..(r + 1) * cols]);
        }
    }
}

pub fn softmax_in_place<F: Real>(v: &mut [F]) {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Backward of softmax: given `p = softmax(s)` and `dp`, returns `ds` in place
/// of `dp`.
pub fn softmax_backward_in_place<F: Real>(p: &[F], dp: &mut [F]) {
    let inner = dot(p, dp);
    for (d, &pi) in dp.iter_mut().zip(p) {
        *d = pi * (*d - inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose_agree() {
        // 2x3
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        matvec(&m, 2, 3, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);

        let mut back = [0.0; 3];
        matvec_t_acc(&m, 2, 3, &[1.0, 1.0], &mut back);
        assert_eq!(back, [5.0, 7.0, 9.0]);

        let mut row = [0.0; 3];
        vecmat(&[1.0, 1.0], &m, 2, 3, &mut row);
        assert_eq!(row, back);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let mut v = [1000.0f64, 1000.0];
        softmax_in_place(&mut v);
        assert_eq!(v, [0.5, 0.5]);
    }
}
