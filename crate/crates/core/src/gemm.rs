//! Packed matrix multiply used by the convolution and affine layers.
//!
//! Every output element is accumulated from zero in strictly increasing
//! `k` order, with no reassociation and no fused multiply-add. Results are
//! therefore independent of blocking, and inserting extra terms whose
//! left factor is an exact zero leaves every output bit unchanged.

use crate::tensor::Scalar;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] = a[m×k] · b[k×n]`, all row-major. `c` is overwritten.
pub(crate) fn gemm<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(T::ZERO);
        return;
    }

    let row_blocks = m.div_ceil(MR);
    let mut a_packed = vec![T::ZERO; row_blocks * k * MR];
    for ib in 0..row_blocks {
        let block = &mut a_packed[ib * k * MR..(ib + 1) * k * MR];
        for r in 0..MR.min(m - ib * MR) {
            let row = &a[(ib * MR + r) * k..(ib * MR + r + 1) * k];
            for (kk, &v) in row.iter().enumerate() {
                block[kk * MR + r] = v;
            }
        }
    }

    let mut b_panel = vec![T::ZERO; k * NR];
    for jb in (0..n).step_by(NR) {
        let width = NR.min(n - jb);
        for kk in 0..k {
            let dst = &mut b_panel[kk * NR..(kk + 1) * NR];
            dst[..width].copy_from_slice(&b[kk * n + jb..kk * n + jb + width]);
            dst[width..].fill(T::ZERO);
        }
        for ib in 0..row_blocks {
            let mut acc = [[T::ZERO; NR]; MR];
            micro_kernel(
                &a_packed[ib * k * MR..(ib + 1) * k * MR],
                &b_panel,
                &mut acc,
            );
            for (r, acc_row) in acc.iter().enumerate().take(MR.min(m - ib * MR)) {
                let i = ib * MR + r;
                c[i * n + jb..i * n + jb + width].copy_from_slice(&acc_row[..width]);
            }
        }
    }
}

#[inline(always)]
fn micro_kernel<T: Scalar>(a_block: &[T], b_panel: &[T], acc: &mut [[T; NR]; MR]) {
    for (a, b) in a_block.chunks_exact(MR).zip(b_panel.chunks_exact(NR)) {
        let a: &[T; MR] = a.try_into().unwrap();
        let b: &[T; NR] = b.try_into().unwrap();
        for r in 0..MR {
            let ar = a[r];
            for c in 0..NR {
                acc[r][c] += ar * b[c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for kk in 0..k {
                    s += a[i * k + kk] * b[kk * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matches_naive_order_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, n, k) in &[(1, 1, 1), (3, 5, 7), (8, 16, 4), (17, 33, 19), (9, 50, 1)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut c = vec![f64::NAN; m * n];
            gemm(m, n, k, &a, &b, &mut c);
            assert_eq!(c, naive(m, n, k, &a, &b));
        }
    }
}
