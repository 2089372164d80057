#![allow(dead_code)]

pub mod brute;

use nalgebra::{DMatrix, DVector};

/// `½I + ½[(1 − β)(𝒲 ⊗ I_q) + βÃ]` and `½βb̃`, assembled entry by entry from
/// the raw blocks without the library's tilde or lift code.
pub fn dense_step(
    blocks: &[(DMatrix<f64>, DVector<f64>)],
    thetas: &[f64],
    w: &DMatrix<f64>,
    beta: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = blocks.len();
    let q = blocks[0].0.ncols();
    let n = m * q;
    let mut lin = DMatrix::zeros(n, n);
    let mut off = DVector::zeros(n);
    for i in 0..m {
        let (a, b) = &blocks[i];
        for r in 0..q {
            for j in 0..m {
                lin[(i * q + r, j * q + r)] += 0.5 * (1.0 - beta) * w[(i, j)];
            }
            lin[(i * q + r, i * q + r)] += 0.5;
            for s in 0..q {
                let mut ata = 0.0;
                for k in 0..a.nrows() {
                    ata += a[(k, r)] * a[(k, s)];
                }
                let tilde = if r == s { 1.0 } else { 0.0 } - thetas[i] * ata;
                lin[(i * q + r, i * q + s)] += 0.5 * beta * tilde;
            }
            let mut atb = 0.0;
            for k in 0..a.nrows() {
                atb += a[(k, r)] * b[k];
            }
            off[i * q + r] = 0.5 * beta * thetas[i] * atb;
        }
    }
    (lin, off)
}

/// 64-bit FNV-1a over a sequence of indices.
pub fn fnv1a(seq: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &v in seq {
        for byte in (v as u64).to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}
