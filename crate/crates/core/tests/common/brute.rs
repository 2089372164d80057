//! Independent dense reference for the limit point: Gauss–Jordan elimination
//! on `[C | d]` gives a particular solution and a nullspace basis from the
//! free columns; Gram–Schmidt orthonormalizes the basis and the projection is
//! written in closed form. No SVD and no library solver is involved.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub struct BruteAffine {
    pub particular: DVector<f64>,
    /// Orthonormal columns spanning `null(C)`.
    pub basis: Vec<DVector<f64>>,
    pub consistent: bool,
}

pub fn brute_affine(c: &DMatrix<f64>, d: &DVector<f64>, tol: f64) -> BruteAffine {
    let (rows, cols) = c.shape();
    let mut aug = DMatrix::zeros(rows, cols + 1);
    aug.view_mut((0, 0), (rows, cols)).copy_from(c);
    aug.column_mut(cols).copy_from(d);
    let scale = c.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);

    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows)
            .map(|i| (i, aug[(i, col)].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol * scale {
            continue;
        }
        aug.swap_rows(r, best);
        let p = aug[(r, col)];
        for k in 0..=cols {
            aug[(r, k)] /= p;
        }
        for i in 0..rows {
            if i != r {
                let f = aug[(i, col)];
                if f != 0.0 {
                    for k in 0..=cols {
                        aug[(i, k)] -= f * aug[(r, k)];
                    }
                }
            }
        }
        pivots.push(col);
        r += 1;
    }
    let consistent = (r..rows).all(|i| aug[(i, cols)].abs() <= 1e-8 * (1.0 + d.amax()));

    let mut particular = DVector::zeros(cols);
    for (i, &pc) in pivots.iter().enumerate() {
        particular[pc] = aug[(i, cols)];
    }
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for &f in &free {
        let mut v = DVector::zeros(cols);
        v[f] = 1.0;
        for (i, &pc) in pivots.iter().enumerate() {
            v[pc] = -aug[(i, f)];
        }
        // modified Gram–Schmidt, applied twice for stability
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v -= b * proj;
            }
        }
        let n = v.norm();
        basis.push(v / n);
    }
    BruteAffine {
        particular,
        basis,
        consistent,
    }
}

/// `p + N Nᵀ (x₀ − p)`.
pub fn brute_projection(c: &DMatrix<f64>, d: &DVector<f64>, x0: &DVector<f64>) -> (DVector<f64>, usize) {
    let set = brute_affine(c, d, 1e-11);
    assert!(set.consistent, "brute-force oracle found an inconsistent system");
    let delta = x0 - &set.particular;
    let mut x = set.particular.clone();
    for b in &set.basis {
        x += b * b.dot(&delta);
    }
    (x, set.basis.len())
}
