//! Matrix kernels shared by forward ops and their adjoints. All kernels
//! accumulate into `c` so backward passes can reuse them without temporaries;
//! forward callers zero-fill first. Loop orders keep the innermost axis
//! contiguous so the compiler can vectorize.

use super::tensor::Scalar;

/// c[m×n] += a[m×k] · b[k×n]
pub fn mm_nn<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == E::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                c_row[j] = c_row[j] + aik * b_row[j];
            }
        }
    }
}

/// c[m×n] += a[m×k] · b[n×k]ᵀ  (rows of `b` are dotted against rows of `a`)
pub fn mm_nt<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c_row[j] = c_row[j] + dot(a_row, b_row);
        }
    }
}

/// c[k×n] += a[m×k]ᵀ · b[m×n]
pub fn mm_tn<E: Scalar>(a: &[E], b: &[E], m: usize, k: usize, n: usize, c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for row in 0..m {
        let a_row = &a[row * k..(row + 1) * k];
        let b_row = &b[row * n..(row + 1) * n];
        for kk in 0..k {
            let w = a_row[kk];
            if w == E::zero() {
                continue;
            }
            let c_row = &mut c[kk * n..(kk + 1) * n];
            for j in 0..n {
                c_row[j] = c_row[j] + w * b_row[j];
            }
        }
    }
}

/// Four-accumulator dot product; the split breaks the serial dependency chain
/// so the reduction vectorizes.
#[inline]
pub fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (E::zero(), E::zero(), E::zero(), E::zero());
    for i in 0..chunks {
        let p = i * 4;
        s0 = s0 + a[p] * b[p];
        s1 = s1 + a[p + 1] * b[p + 1];
        s2 = s2 + a[p + 2] * b[p + 2];
        s3 = s3 + a[p + 3] * b[p + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..n {
        s = s + a[i] * b[i];
    }
    s
}
