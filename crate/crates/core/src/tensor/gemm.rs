//! Small matrix-multiply kernels. Plain safe Rust, written so the loop
//! bodies autovectorize; column tiling keeps the streamed operand in L2.

use crate::real::Real;

const COL_TILE: usize = 512;

/// c[m×n] += a[m×k] · b[k×n]
pub fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut j0 = 0;
    while j0 < n {
        let jw = COL_TILE.min(n - j0);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n + j0..i * n + j0 + jw];
            for (p, &ap) in arow.iter().enumerate() {
                let brow = &b[p * n + j0..p * n + j0 + jw];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += ap * bv;
                }
            }
        }
        j0 += jw;
    }
}

/// c[m×n] += a[m×k] · b[n×k]ᵀ  (dot-product form)
pub fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(arow, brow);
        }
    }
}

/// c[m×n] += a[k×m]ᵀ · b[k×n]  (rank-1 accumulation form)
pub fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &ap) in arow.iter().enumerate() {
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += ap * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulators so the reduction
/// vectorizes without reassociation.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let av = &a[i * 8..i * 8 + 8];
        let bv = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] += av[l] * bv[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}
