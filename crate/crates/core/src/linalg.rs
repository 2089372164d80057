//! Dense linear-algebra helpers shared by the solver modules.

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix, DVector};

/// Tolerance on successive Rayleigh quotients in [`lambda_max_psd`].
pub const POWER_TOL: f64 = 1e-12;
/// Iteration cap for [`lambda_max_psd`].
pub const POWER_MAX_ITERS: usize = 10_000;

/// Deterministic start vector with no special alignment to coordinate axes.
fn start_vector(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| 1.0 + 0.37 * ((i as f64 + 1.0) * 1.618_033_988_749_895).fract())
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
pub fn lambda_max_psd(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = start_vector(n);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = m * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs().max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Spectral norm ‖M‖₂ via power iteration on MᵀM.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    lambda_max_psd(&(m.transpose() * m)).max(0.0).sqrt()
}

/// Eigenvalues of a general real square matrix, sorted by (Re, Im) ascending.
///
/// Returns `None` if the QR iteration fails to converge, even after a shift.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let n = m.nrows();
    let triangular = (0..n).all(|i| (0..i).all(|j| m[(i, j)] == 0.0));
    let mut ev: Vec<Complex<f64>> = if triangular {
        // nalgebra's Schur iteration does not terminate on some already
        // triangular inputs (e.g. the zero matrix).
        m.diagonal().iter().map(|&d| Complex::new(d, 0.0)).collect()
    } else {
        let max_iters = 1000 * n.max(1);
        match Schur::try_new(m.clone(), f64::EPSILON, max_iters) {
            Some(s) => s.complex_eigenvalues().iter().copied().collect(),
            None => {
                let shift = 1.0 + m.norm();
                let shifted = m + DMatrix::identity(n, n) * shift;
                Schur::try_new(shifted, f64::EPSILON, max_iters)?
                    .complex_eigenvalues()
                    .iter()
                    .map(|z| z - shift)
                    .collect()
            }
        }
    };
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Some(ev)
}

/// Solution set `{x : Cx = d}` in least-squares form: the minimum-norm
/// least-squares point plus an orthonormal basis of `null(C)`.
#[derive(Debug, Clone)]
pub struct AffineSet {
    pub particular: DVector<f64>,
    pub basis: DMatrix<f64>,
    /// ‖C·particular − d‖.
    pub residual: f64,
    pub rank: usize,
}

impl AffineSet {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Orthogonal projector onto the direction space.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Checks `x` lies in the set: `x − particular` is in the span of the basis.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let diff = x - &self.particular;
        let proj = &self.basis * (self.basis.transpose() * &diff);
        (diff - proj).norm() <= tol * (1.0 + x.norm())
    }

    /// Same dimension, same direction space, same minimum-norm point.
    pub fn approx_eq(&self, other: &AffineSet, tol: f64) -> bool {
        self.dim() == other.dim()
            && (self.projector() - other.projector()).norm() <= tol
            && (&self.particular - &other.particular).norm() <= tol * (1.0 + self.particular.norm())
    }
}

/// Pseudo-inverse style solve of `Cx = d` via the SVD of `C`; singular values
/// at or below `rel_tol · σ_max` are treated as zero.
pub fn affine_solution_set(c: &DMatrix<f64>, d: &DVector<f64>, rel_tol: f64) -> AffineSet {
    let n = c.ncols();
    // Pad wide matrices so the SVD returns a full right basis.
    let padded;
    let (cm, dm) = if c.nrows() < n {
        let mut cc = DMatrix::zeros(n, n);
        cc.rows_mut(0, c.nrows()).copy_from(c);
        let mut dd = DVector::zeros(n);
        dd.rows_mut(0, d.len()).copy_from(d);
        padded = (cc, dd);
        (&padded.0, &padded.1)
    } else {
        (c, d)
    };
    let svd = cm.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let thr = rel_tol * s_max;

    let utd = u.transpose() * dm;
    let mut x = DVector::zeros(n);
    let mut null_cols = Vec::new();
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let row = v_t.row(k).transpose();
        if s > thr && s > 0.0 {
            rank += 1;
            x += row * (utd[k] / s);
        } else {
            null_cols.push(row);
        }
    }
    let basis = if null_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    let residual = (c * &x - d).norm();
    AffineSet {
        particular: x,
        basis,
        residual,
        rank,
    }
}
