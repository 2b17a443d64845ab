//! Deterministic tiled matrix multiplication.
//!
//! `C[m,n] = A[m,k] * B[k,n]` with `B` supplied transposed (`bt[n,k]`).
//! Both operands are repacked into interleaved panels so the register-tile
//! kernel streams contiguous memory with no bounds checks. Panels are
//! zero-padded to the tile size, so one kernel covers every edge. Each
//! output element is produced by exactly one kernel invocation whose inner
//! loop runs in a fixed order, making results identical for any thread
//! count. Contractions in the network never exceed a few hundred elements,
//! which keeps whole-k register tiles practical.

use super::Scalar;
use crate::parallel;

const MR: usize = 12;
const NR: usize = 32;
const TILES_PER_BLOCK: usize = 10;
const ROW_BLOCK: usize = MR * TILES_PER_BLOCK;

/// `c[m*n] = a[m*k] * bt[n*k]^T`, overwriting `c`.
pub fn matmul_abt<T: Scalar>(a: &[T], bt: &[T], m: usize, n: usize, k: usize, c: &mut [T]) {
    assert_eq!(a.len(), m * k, "matmul: lhs length");
    assert_eq!(bt.len(), n * k, "matmul: rhs length");
    assert_eq!(c.len(), m * n, "matmul: out length");
    if m == 0 || n == 0 {
        return;
    }
    assert!(k > 0, "matmul: empty contraction");

    // Pack B into NR-wide column panels, p-major, zero-padded.
    let nblk = n.div_ceil(NR);
    let mut bpack = vec![T::ZERO; nblk * k * NR];
    parallel::for_each_chunk_mut(&mut bpack, k * NR, |jb, panel| {
        let j0 = jb * NR;
        let jcnt = NR.min(n - j0);
        for p in 0..k {
            for jj in 0..jcnt {
                panel[p * NR + jj] = bt[(j0 + jj) * k + p];
            }
        }
    });

    parallel::for_each_chunk_mut(c, ROW_BLOCK * n, |ib, cchunk| {
        let i0 = ib * ROW_BLOCK;
        let rows = ROW_BLOCK.min(m - i0);
        let ntiles = rows.div_ceil(MR);
        // Pack this block of A into MR-interleaved tile panels, zero-padded.
        let mut apack = vec![T::ZERO; ntiles * k * MR];
        for t in 0..ntiles {
            let r0 = i0 + t * MR;
            let rcnt = MR.min(m - r0);
            let panel = &mut apack[t * k * MR..(t + 1) * k * MR];
            for r in 0..rcnt {
                let row = &a[(r0 + r) * k..(r0 + r + 1) * k];
                for (p, &v) in row.iter().enumerate() {
                    panel[p * MR + r] = v;
                }
            }
        }
        for t in 0..ntiles {
            let apanel = &apack[t * k * MR..(t + 1) * k * MR];
            let tr0 = t * MR;
            let rcnt = MR.min(rows - tr0);
            for jb in 0..nblk {
                let bpanel = &bpack[jb * k * NR..(jb + 1) * k * NR];
                let acc = kernel(apanel, bpanel);
                let j0 = jb * NR;
                let jcnt = NR.min(n - j0);
                for (r, accrow) in acc.iter().enumerate().take(rcnt) {
                    let dst = &mut cchunk[(tr0 + r) * n + j0..(tr0 + r) * n + j0 + jcnt];
                    dst.copy_from_slice(&accrow[..jcnt]);
                }
            }
        }
    });
}

#[inline(always)]
fn kernel<T: Scalar>(apanel: &[T], bpanel: &[T]) -> [[T; NR]; MR] {
    let mut acc = [[T::ZERO; NR]; MR];
    for (ap, bp) in apanel.chunks_exact(MR).zip(bpanel.chunks_exact(NR)) {
        let av: &[T; MR] = ap.try_into().unwrap();
        let b: &[T; NR] = bp.try_into().unwrap();
        for r in 0..MR {
            for j in 0..NR {
                acc[r][j] = av[r].mul_add(b[j], acc[r][j]);
            }
        }
    }
    acc
}

/// Out-of-place transpose: `a[rows, cols]` -> `[cols, rows]`.
pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    assert_eq!(a.len(), rows * cols);
    let mut out = vec![T::ZERO; rows * cols];
    parallel::for_each_chunk_mut(&mut out, 64 * rows, |cb, chunk| {
        let c0 = cb * 64;
        let ccnt = chunk.len() / rows;
        for r in 0..rows {
            let src = &a[r * cols + c0..r * cols + c0 + ccnt];
            for (cc, &v) in src.iter().enumerate() {
                chunk[cc * rows + r] = v;
            }
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(a: &[f64], bt: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * bt[j * k + p];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matches_reference_over_odd_sizes() {
        let mut rng = crate::rng::DetRng::child(11, "matmul-test");
        for &(m, n, k) in &[
            (1, 1, 1),
            (5, 7, 3),
            (12, 32, 448),
            (17, 33, 448),
            (64, 31, 65),
            (121, 192, 336),
            (250, 65, 17),
        ] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let bt: Vec<f64> = (0..n * k).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let mut c = vec![0.0; m * n];
            matmul_abt(&a, &bt, m, n, k, &mut c);
            let want = reference(&a, &bt, m, n, k);
            for (got, want) in c.iter().zip(want.iter()) {
                assert!((got - want).abs() < 1e-10, "{got} vs {want} at ({m},{n},{k})");
            }
        }
    }

    #[test]
    fn f32_path_is_accurate() {
        let mut rng = crate::rng::DetRng::child(12, "matmul-f32");
        let (m, n, k) = (33, 65, 448);
        let a32: Vec<f32> = (0..m * k)
            .map(|_| rng.uniform_range(-1.0, 1.0) as f32)
            .collect();
        let bt32: Vec<f32> = (0..n * k)
            .map(|_| rng.uniform_range(-1.0, 1.0) as f32)
            .collect();
        let mut c32 = vec![0.0f32; m * n];
        matmul_abt(&a32, &bt32, m, n, k, &mut c32);
        let a64: Vec<f64> = a32.iter().map(|&x| x as f64).collect();
        let bt64: Vec<f64> = bt32.iter().map(|&x| x as f64).collect();
        let want = reference(&a64, &bt64, m, n, k);
        for (got, want) in c32.iter().zip(want.iter()) {
            assert!((*got as f64 - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn transpose_roundtrip() {
        let a: Vec<f32> = (0..15).map(|i| i as f32).collect();
        let t = transpose(&a, 3, 5);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[1], 5.0);
        let back = transpose(&t, 5, 3);
        assert_eq!(back, a);
    }
}
