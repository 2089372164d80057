//! Closed-form limit of the iteration: the orthogonal projection of `x₀`
//! onto `{x : x = W(ω)x for every ω, x = Ãx + b̃}`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::GraphUniverse;
use crate::problem::{StackedState, TildeSystem};

/// Singular values at or below this fraction of σ_max are treated as zero.
pub const RANK_TOL: f64 = 1e-10;
/// Default feasibility tolerance, relative to `1 + ‖d‖`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// `C x = d` with one `(I − 𝒲(ω)) ⊗ I_q` block per graph and a final
/// `I − Ã` block with right-hand side `b̃`. Graph blocks keep only the
/// `m × m` pattern.
#[derive(Debug, Clone)]
pub struct ConstraintStack {
    m: usize,
    q: usize,
    graph_blocks: Vec<DMatrix<f64>>,
    tilde_linear: DMatrix<f64>,
    tilde_offset: DVector<f64>,
}

pub fn build_constraints(universe: &GraphUniverse, tilde: &TildeSystem) -> ConstraintStack {
    let m = universe.m();
    let n = m * tilde.q();
    ConstraintStack {
        m,
        q: tilde.q(),
        graph_blocks: universe
            .graphs()
            .iter()
            .map(|g| DMatrix::identity(m, m) - g.weights())
            .collect(),
        tilde_linear: DMatrix::identity(n, n) - tilde.dense_linear(),
        tilde_offset: tilde.offset(),
    }
}

impl ConstraintStack {
    pub fn dim(&self) -> usize {
        self.m * self.q
    }

    pub fn rows(&self) -> usize {
        (self.graph_blocks.len() + 1) * self.dim()
    }

    pub fn graph_blocks(&self) -> &[DMatrix<f64>] {
        &self.graph_blocks
    }

    /// Expanded `(C, d)`.
    pub fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let eye_q = DMatrix::identity(self.q, self.q);
        let mut c = DMatrix::zeros(self.rows(), n);
        let mut d = DVector::zeros(self.rows());
        for (k, blk) in self.graph_blocks.iter().enumerate() {
            c.rows_mut(k * n, n).copy_from(&blk.kronecker(&eye_q));
        }
        let last = self.graph_blocks.len() * n;
        c.rows_mut(last, n).copy_from(&self.tilde_linear);
        d.rows_mut(last, n).copy_from(&self.tilde_offset);
        (c, d)
    }

    /// `‖Cx − d‖`, applying graph blocks without expansion.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        let (m, q) = (self.m, self.q);
        let mut sq = 0.0;
        for blk in &self.graph_blocks {
            for i in 0..m {
                let mut acc = DVector::zeros(q);
                for j in 0..m {
                    let c = blk[(i, j)];
                    if c != 0.0 {
                        acc.axpy(c, &x.rows(j * q, q), 1.0);
                    }
                }
                sq += acc.norm_squared();
            }
        }
        sq += (&self.tilde_linear * x - &self.tilde_offset).norm_squared();
        sq.sqrt()
    }

    pub fn rhs_norm(&self) -> f64 {
        self.tilde_offset.norm()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub x_star: Vec<f64>,
    pub constraint_residual: f64,
    /// Dimension of `null(C)`; zero means the limit does not depend on `x₀`.
    pub nullspace_dim: usize,
    pub rank: usize,
    pub elapsed_secs: f64,
}

impl OracleResult {
    pub fn state(&self, m: usize, q: usize) -> StackedState {
        StackedState::from_vector(m, q, DVector::from_column_slice(&self.x_star))
    }
}

/// Minimizer of `‖x − x₀‖` subject to `Cx = d`:
/// `x* = x₀ − Cᵀw` with `w` the minimum-norm solution of `(CCᵀ)w = Cx₀ − d`,
/// evaluated through the SVD `C = UΣVᵀ` as `x* = x₀ − VΣ⁺Uᵀ(Cx₀ − d)`.
pub fn project_affine(stack: &ConstraintStack, x0: &StackedState, tol: f64) -> Result<OracleResult> {
    let start = Instant::now();
    let n = stack.dim();
    if x0.data.len() != n {
        return Err(Error::Dimension(format!("x0 has length {}, expected {n}", x0.data.len())));
    }
    let (c, d) = stack.dense();
    let r = &c * &x0.data - &d;
    let svd = c.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let thr = RANK_TOL * s_max;
    let utr = u.transpose() * &r;
    let mut correction = DVector::zeros(n);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > thr && s > 0.0 {
            rank += 1;
            correction += v_t.row(k).transpose() * (utr[k] / s);
        }
    }
    let x_star = &x0.data - correction;
    let residual = stack.residual(&x_star);
    if residual > tol * (1.0 + stack.rhs_norm()) {
        return Err(Error::Infeasible { residual });
    }
    Ok(OracleResult {
        x_star: x_star.iter().copied().collect(),
        constraint_residual: residual,
        nullspace_dim: n - rank,
        rank,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Terminal distance to the oracle limit is within `tol`.
pub fn verify_limit(terminal: &StackedState, x_star: &StackedState, tol: f64) -> bool {
    (&terminal.data - &x_star.data).norm() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedGraph;
    use crate::problem::{build_tilde, default_thetas, Block, PartitionedSystem};
    use approx::assert_relative_eq;

    fn system(a: &[[f64; 3]], b: &[f64]) -> TildeSystem {
        let blocks = a
            .iter()
            .zip(b)
            .map(|(r, &bi)| Block::from_rows(&[r.to_vec()], &[bi]).unwrap())
            .collect();
        let sys = PartitionedSystem::new(blocks).unwrap();
        build_tilde(&sys, &default_thetas(&sys).unwrap()).unwrap()
    }

    fn complete3() -> GraphUniverse {
        GraphUniverse::new(vec![WeightedGraph::from_matrix("complete", DMatrix::from_element(3, 3, 1.0 / 3.0)).unwrap()])
            .unwrap()
    }

    fn example1_x0() -> StackedState {
        StackedState::from_agents(&[vec![-3.0, 1.0, 2.0], vec![2.0, -2.0, 1.0], vec![1.0, 3.0, -1.0]]).unwrap()
    }

    #[test]
    fn identity_graph_block_is_vacuous() {
        let t = system(&[[1.0, 0.0, 0.0], [2.0, 1.0, 0.0], [3.0, 1.0, 2.0]], &[1.0, 2.0, 1.0]);
        let u = GraphUniverse::new(vec![WeightedGraph::identity("idle", 3)]).unwrap();
        let s = build_constraints(&u, &t);
        assert_eq!(s.graph_blocks()[0], DMatrix::<f64>::zeros(3, 3));
    }

    #[test]
    fn example1_graph_block_rank() {
        let t = system(&[[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [3.0, 6.0, 3.0]], &[1.0, 2.0, 3.0]);
        let s = build_constraints(&complete3(), &t);
        let (c, _) = s.dense();
        let graph_rows = c.rows(0, 9).into_owned();
        assert_eq!(graph_rows.rank(1e-10), 6);
    }

    #[test]
    fn example1_limit() {
        let t = system(&[[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [3.0, 6.0, 3.0]], &[1.0, 2.0, 3.0]);
        let s = build_constraints(&complete3(), &t);
        let r = project_affine(&s, &example1_x0(), FEASIBILITY_TOL).unwrap();
        let want = [-1.0 / 6.0, 1.0 / 3.0, 0.5];
        for (k, v) in r.x_star.iter().enumerate() {
            assert_relative_eq!(*v, want[k % 3], epsilon = 1e-12);
        }
        assert_eq!(r.nullspace_dim, 2);
    }

    #[test]
    fn example2_limit_is_unique() {
        let t = system(&[[1.0, 0.0, 0.0], [2.0, 1.0, 0.0], [3.0, 1.0, 2.0]], &[1.0, 2.0, 1.0]);
        let s = build_constraints(&complete3(), &t);
        let x0 = StackedState::from_agents(&[vec![5.0, 1.0, 0.0], vec![-1.0, 2.0, 3.0], vec![0.0, 0.0, 7.0]]).unwrap();
        let r = project_affine(&s, &x0, FEASIBILITY_TOL).unwrap();
        assert_eq!(r.nullspace_dim, 0);
        for (k, v) in r.x_star.iter().enumerate() {
            assert_relative_eq!(*v, [1.0, 0.0, -1.0][k % 3], epsilon = 1e-9);
        }
    }

    #[test]
    fn feasible_point_projects_to_itself() {
        let t = system(&[[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [3.0, 6.0, 3.0]], &[1.0, 2.0, 3.0]);
        let s = build_constraints(&complete3(), &t);
        let x0 = StackedState::consensus(3, &DVector::from_vec(vec![1.0, 1.0, -2.0]));
        let r = project_affine(&s, &x0, FEASIBILITY_TOL).unwrap();
        assert_relative_eq!(DVector::from_vec(r.x_star), x0.data, epsilon = 1e-12);
    }

    #[test]
    fn inconsistent_system_is_infeasible() {
        // x = 1 and x = 2 held by different agents
        let t = system(&[[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], &[1.0, 2.0, 0.0]);
        let s = build_constraints(&complete3(), &t);
        let err = project_affine(&s, &StackedState::zeros(3, 3), FEASIBILITY_TOL).unwrap_err();
        assert!(matches!(err, Error::Infeasible { residual } if residual > 0.1));
    }

    #[test]
    fn verify_limit_detects_offset() {
        let x = StackedState::consensus(3, &DVector::from_vec(vec![1.0, 0.0, -1.0]));
        let mut y = x.clone();
        assert!(verify_limit(&x, &y, 1e-6));
        y.data[0] += 1.0;
        assert!(!verify_limit(&x, &y, 1e-6));
    }
}
