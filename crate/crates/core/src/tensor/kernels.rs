//! Dense matrix kernels shared by forward and backward passes.
//!
//! Plain row-major loops arranged so the inner loop runs over contiguous
//! slices and auto-vectorizes. No threading here; determinism comes first.

use crate::scalar::Scalar;

/// `out[m x n] += a[m x k] * b[k x n]`
pub fn mm_acc<S: Scalar>(out: &mut [S], a: &[S], b: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m x k] += g[m x n] * b^T` where `b` is stored `[k x n]`.
pub fn mm_bt_acc<S: Scalar>(out: &mut [S], g: &[S], b: &[S], m: usize, n: usize, k: usize) {
    debug_assert_eq!(out.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = S::zero();
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                acc = acc + gv * bv;
            }
            *o = *o + acc;
        }
    }
}

/// `out[k x n] += a^T * g` where `a` is stored `[m x k]` and `g` is `[m x n]`.
pub fn mm_at_acc<S: Scalar>(out: &mut [S], a: &[S], g: &[S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o = *o + av * gv;
            }
        }
    }
}
