//! Row-major dense matrix kernels sized for small CPU training runs.
//!
//! Three shapes cover every product in the forward and backward passes:
//! NN (A * B), TN (A^T * B) and NT (A * B^T). Inner loops run over
//! contiguous rows so they vectorize; rows of the output are independent
//! and parallelized with rayon above a size threshold. Per-row arithmetic
//! order is fixed, so results are run-to-run deterministic.

use rayon::prelude::*;

use crate::scalar::Real;

const PAR_THRESHOLD: usize = 1 << 16;

/// out(m x n) = a(m x k) * b(k x n)
pub fn matmul_nn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [T]| {
        for v in out_row.iter_mut() {
            *v = T::zero();
        }
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(i, r);
        }
    }
}

/// out(m x n) = a^T * b where a is (k x m), b is (k x n)
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [T]| {
        for v in out_row.iter_mut() {
            *v = T::zero();
        }
        for kk in 0..k {
            let aki = a[kk * m + i];
            if aki == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aki * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(i, r);
        }
    }
}

/// Dot product with 8 independent accumulators (fixed order, vectorizable).
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let i = c * 8;
        for l in 0..8 {
            acc[l] = acc[l] + a[i + l] * b[i + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    acc.iter().fold(tail, |s, &x| s + x)
}

/// out(m x n) = a(m x k) * b^T where b is (n x k)
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(out.len(), m * n);
    let row = |i: usize, out_row: &mut [T]| {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            *o = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(i, r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    out[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        out
    }

    fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = a[i * c + j];
            }
        }
        out
    }

    #[test]
    fn kernels_agree_with_naive() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        for (m, k, n) in [(1, 1, 1), (3, 5, 7), (17, 9, 4), (20, 33, 20)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let want = naive(&a, &b, m, k, n);
            let mut got = vec![0.0; m * n];
            matmul_nn(&a, &b, m, k, n, &mut got);
            let mut got_tn = vec![0.0; m * n];
            matmul_tn(&transpose(&a, m, k), &b, m, k, n, &mut got_tn);
            let mut got_nt = vec![0.0; m * n];
            matmul_nt(&a, &transpose(&b, k, n), m, k, n, &mut got_nt);
            for i in 0..m * n {
                assert!((got[i] - want[i]).abs() < 1e-12);
                assert!((got_tn[i] - want[i]).abs() < 1e-12);
                assert!((got_nt[i] - want[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let want: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - want).abs() < 1e-12);
    }
}
