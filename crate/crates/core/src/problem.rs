//! Row-partitioned linear systems and their per-agent fixed-point form.
//!
//! Agent `i` privately holds `A_i x = b_i`. The gradient-step map
//! `x_i ↦ (I − θ_i A_iᵀA_i) x_i + θ_i A_iᵀ b_i` has exactly the solutions of
//! that equation as fixed points, and it is nonexpansive whenever
//! `0 < θ_i < 2 / λmax(A_i A_iᵀ)`.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lambda_max_psd;

/// One agent's private equation `A_i x = b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Block {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::Dimension(format!(
                "block has {} rows but right-hand side of length {}",
                a.nrows(),
                b.len()
            )));
        }
        Ok(Self { a, b })
    }

    /// Builds a block from dense rows `[a_1 .. a_q]` and right-hand sides.
    pub fn from_rows(rows: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let q = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::Dimension("ragged rows in block".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(
            DMatrix::from_row_slice(rows.len(), q, &flat),
            DVector::from_column_slice(b),
        )
    }

    /// `λmax(A_i A_iᵀ)`.
    pub fn lambda_max(&self) -> f64 {
        lambda_max_psd(&(&self.a * self.a.transpose()))
    }
}

/// The stacked equation split row-wise among `m` agents over unknowns in ℝ^q.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedSystem {
    m: usize,
    q: usize,
    blocks: Vec<Block>,
}

impl PartitionedSystem {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        let m = blocks.len();
        if m == 0 {
            return Err(Error::Dimension("a system needs at least one agent".into()));
        }
        let q = blocks[0].a.ncols();
        if q == 0 {
            return Err(Error::Dimension("unknown dimension q must be positive".into()));
        }
        for (i, blk) in blocks.iter().enumerate() {
            if blk.a.ncols() != q {
                return Err(Error::Dimension(format!(
                    "block {} has {} columns, expected {q}",
                    i + 1,
                    blk.a.ncols()
                )));
            }
            if blk.a.nrows() == 0 {
                return Err(Error::Dimension(format!("block {} has no rows", i + 1)));
            }
        }
        Ok(Self { m, q, blocks })
    }

    /// Strips all-zero rows whose right-hand side is zero. An all-zero row
    /// with a nonzero right-hand side makes the system inconsistent; a block
    /// left with no rows cannot be dropped without changing `m`.
    pub fn preprocess(blocks: Vec<Block>) -> Result<Self> {
        let mut cleaned = Vec::with_capacity(blocks.len());
        for (bi, blk) in blocks.into_iter().enumerate() {
            let mut keep = Vec::new();
            for r in 0..blk.a.nrows() {
                if blk.a.row(r).iter().all(|&v| v == 0.0) {
                    if blk.b[r] != 0.0 {
                        return Err(Error::InconsistentRow {
                            block: bi + 1,
                            row: r + 1,
                            rhs: blk.b[r],
                        });
                    }
                } else {
                    keep.push(r);
                }
            }
            if keep.is_empty() {
                return Err(Error::DegenerateBlock { block: bi + 1 });
            }
            let a = blk.a.select_rows(keep.iter());
            let b = DVector::from_iterator(keep.len(), keep.iter().map(|&r| blk.b[r]));
            cleaned.push(Block { a, b });
        }
        Self::new(cleaned)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Total number of equation rows `μ = Σ μ_i`.
    pub fn total_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.a.nrows()).sum()
    }

    /// The un-partitioned system `[A; b]` obtained by stacking all blocks.
    pub fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mu = self.total_rows();
        let mut a = DMatrix::zeros(mu, self.q);
        let mut b = DVector::zeros(mu);
        let mut r = 0;
        for blk in &self.blocks {
            let k = blk.a.nrows();
            a.rows_mut(r, k).copy_from(&blk.a);
            b.rows_mut(r, k).copy_from(&blk.b);
            r += k;
        }
        (a, b)
    }

    fn check_state(&self, x: &StackedState) -> Result<()> {
        if x.m() != self.m || x.q() != self.q {
            return Err(Error::Dimension(format!(
                "state is {}x{} but system is {}x{}",
                x.m(),
                x.q(),
                self.m,
                self.q
            )));
        }
        Ok(())
    }

    /// `f(x) = Σ_i ‖A_i x_i − b_i‖²`.
    pub fn residual(&self, x: &StackedState) -> Result<f64> {
        self.check_state(x)?;
        Ok(self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, blk)| (&blk.a * x.agent(i) - &blk.b).norm_squared())
            .sum())
    }
}

/// How per-agent step sizes are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaPolicy {
    /// `θ_i = 1 / λmax(A_i A_iᵀ)`.
    #[default]
    InverseLambdaMax,
    /// `θ_i = 2 / κ_i` with `κ_i = ‖A_i A_iᵀ‖_∞`; rejected when it hits the
    /// upper endpoint of the admissible interval.
    InfinityNormBound,
}

/// Default step sizes, `θ_i = 1 / λmax(A_i A_iᵀ)`.
pub fn default_thetas(sys: &PartitionedSystem) -> Result<Vec<f64>> {
    thetas_with_policy(sys, ThetaPolicy::InverseLambdaMax)
}

pub fn thetas_with_policy(sys: &PartitionedSystem, policy: ThetaPolicy) -> Result<Vec<f64>> {
    sys.blocks
        .iter()
        .enumerate()
        .map(|(i, blk)| {
            let lambda = blk.lambda_max();
            if !(lambda > 0.0) {
                return Err(Error::DegenerateBlock { block: i + 1 });
            }
            match policy {
                ThetaPolicy::InverseLambdaMax => Ok(1.0 / lambda),
                ThetaPolicy::InfinityNormBound => {
                    let aat = &blk.a * blk.a.transpose();
                    let kappa = aat
                        .row_iter()
                        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                        .fold(0.0, f64::max);
                    let theta = 2.0 / kappa;
                    check_theta(i, theta, lambda)?;
                    Ok(theta)
                }
            }
        })
        .collect()
}

fn check_theta(block: usize, theta: f64, lambda: f64) -> Result<()> {
    let upper = 2.0 / lambda;
    // Relative guard so θ = 2/λ computed in floating point still counts as the endpoint.
    if !(theta > 0.0) || theta * lambda >= 2.0 * (1.0 - 1e-12) {
        return Err(Error::StepSizeOutOfRange {
            block: block + 1,
            theta,
            upper,
        });
    }
    Ok(())
}

/// The affine map `H(x) = Ãx + b̃` with block-diagonal `Ã`.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeSystem {
    m: usize,
    q: usize,
    thetas: Vec<f64>,
    /// `(I_q − θ_i A_iᵀA_i, θ_i A_iᵀ b_i)` per agent.
    blocks: Vec<(DMatrix<f64>, DVector<f64>)>,
}

/// Builds `Ã` and `b̃` from step sizes strictly inside `(0, 2/λmax)`.
pub fn build_tilde(sys: &PartitionedSystem, thetas: &[f64]) -> Result<TildeSystem> {
    if thetas.len() != sys.m {
        return Err(Error::Dimension(format!(
            "{} step sizes for {} agents",
            thetas.len(),
            sys.m
        )));
    }
    let q = sys.q;
    let mut blocks = Vec::with_capacity(sys.m);
    for (i, (blk, &theta)) in sys.blocks.iter().zip(thetas).enumerate() {
        let lambda = blk.lambda_max();
        if !(lambda > 0.0) {
            return Err(Error::DegenerateBlock { block: i + 1 });
        }
        check_theta(i, theta, lambda)?;
        let ata = blk.a.transpose() * &blk.a;
        let mat = DMatrix::identity(q, q) - ata * theta;
        let off = blk.a.transpose() * &blk.b * theta;
        blocks.push((mat, off));
    }
    Ok(TildeSystem {
        m: sys.m,
        q,
        thetas: thetas.to_vec(),
        blocks,
    })
}

impl TildeSystem {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn blocks(&self) -> &[(DMatrix<f64>, DVector<f64>)] {
        &self.blocks
    }

    /// `Ãx`, block by block.
    pub fn apply_linear(&self, x: &StackedState) -> StackedState {
        let q = self.q;
        let mut out = DVector::zeros(self.m * q);
        for (i, (mat, _)) in self.blocks.iter().enumerate() {
            out.rows_mut(i * q, q).copy_from(&(mat * x.agent(i)));
        }
        StackedState::from_vector(self.m, q, out)
    }

    /// `H(x) = Ãx + b̃`.
    pub fn apply(&self, x: &StackedState) -> StackedState {
        let mut out = self.apply_linear(x);
        out.data += self.offset();
        out
    }

    /// The stacked offset `b̃`.
    pub fn offset(&self) -> DVector<f64> {
        let q = self.q;
        let mut out = DVector::zeros(self.m * q);
        for (i, (_, off)) in self.blocks.iter().enumerate() {
            out.rows_mut(i * q, q).copy_from(off);
        }
        out
    }

    /// Dense `mq × mq` form of `Ã`. Only used by oracles and small checks.
    pub fn dense_linear(&self) -> DMatrix<f64> {
        let q = self.q;
        let mut out = DMatrix::zeros(self.m * q, self.m * q);
        for (i, (mat, _)) in self.blocks.iter().enumerate() {
            out.view_mut((i * q, i * q), (q, q)).copy_from(mat);
        }
        out
    }
}

/// `m` stacked agent estimates `x_i ∈ ℝ^q`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedState {
    m: usize,
    q: usize,
    pub data: DVector<f64>,
}

impl StackedState {
    pub fn zeros(m: usize, q: usize) -> Self {
        Self {
            m,
            q,
            data: DVector::zeros(m * q),
        }
    }

    /// Panics if `data.len() != m * q`.
    pub fn from_vector(m: usize, q: usize, data: DVector<f64>) -> Self {
        assert_eq!(data.len(), m * q, "stacked state must have dimension m*q");
        Self { m, q, data }
    }

    pub fn from_agents(agents: &[Vec<f64>]) -> Result<Self> {
        let m = agents.len();
        let q = agents.first().map_or(0, Vec::len);
        if m == 0 || q == 0 || agents.iter().any(|a| a.len() != q) {
            return Err(Error::Dimension("agent estimates must be nonempty and of equal length".into()));
        }
        let flat: Vec<f64> = agents.iter().flatten().copied().collect();
        Ok(Self::from_vector(m, q, DVector::from_vec(flat)))
    }

    /// `1_m ⊗ v`.
    pub fn consensus(m: usize, v: &DVector<f64>) -> Self {
        let q = v.len();
        Self::from_vector(m, q, DVector::from_fn(m * q, |r, _| v[r % q]))
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn agent(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.rows(i * self.q, self.q)
    }

    /// Average of the agent estimates.
    pub fn mean(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.q);
        for i in 0..self.m {
            acc += self.agent(i);
        }
        acc / self.m as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `Σ_i ‖x_i − x̄‖²`; zero exactly on the consensus subspace.
pub fn consensus_error(x: &StackedState) -> f64 {
    let mean = x.mean();
    (0..x.m()).map(|i| (x.agent(i) - &mean).norm_squared()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rows(a: &[&[f64]], b: &[f64]) -> PartitionedSystem {
        PartitionedSystem::new(
            a.iter()
                .zip(b)
                .map(|(r, &bi)| Block::from_rows(&[r.to_vec()], &[bi]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn example1() -> PartitionedSystem {
        rows(&[&[1.0, 2.0, 1.0], &[2.0, 4.0, 2.0], &[3.0, 6.0, 3.0]], &[1.0, 2.0, 3.0])
    }

    fn example2() -> PartitionedSystem {
        rows(&[&[1.0, 0.0, 0.0], &[2.0, 1.0, 0.0], &[3.0, 1.0, 2.0]], &[1.0, 2.0, 1.0])
    }

    #[test]
    fn thetas_for_both_examples() {
        let t = default_thetas(&example1()).unwrap();
        for (got, want) in t.iter().zip([1.0 / 6.0, 1.0 / 24.0, 1.0 / 54.0]) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
        let t = default_thetas(&example2()).unwrap();
        for (got, want) in t.iter().zip([1.0, 1.0 / 5.0, 1.0 / 14.0]) {
            assert_relative_eq!(*got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn identity_block_has_unit_theta() {
        let sys = PartitionedSystem::new(vec![Block::new(DMatrix::identity(4, 4), DVector::zeros(4)).unwrap()]).unwrap();
        assert_relative_eq!(default_thetas(&sys).unwrap()[0], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_block_is_degenerate() {
        let sys = PartitionedSystem::new(vec![Block::new(DMatrix::zeros(1, 2), DVector::zeros(1)).unwrap()]).unwrap();
        assert_eq!(default_thetas(&sys), Err(Error::DegenerateBlock { block: 1 }));
    }

    #[test]
    fn preprocess_strips_and_rejects_zero_rows() {
        let blk = Block::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]], &[0.0, 2.0]).unwrap();
        let sys = PartitionedSystem::preprocess(vec![blk]).unwrap();
        assert_eq!(sys.blocks()[0].a.nrows(), 1);

        let bad = Block::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]], &[3.0, 2.0]).unwrap();
        assert!(matches!(
            PartitionedSystem::preprocess(vec![bad]),
            Err(Error::InconsistentRow { block: 1, row: 1, .. })
        ));

        let empty = Block::from_rows(&[vec![0.0, 0.0]], &[0.0]).unwrap();
        assert_eq!(PartitionedSystem::preprocess(vec![empty]), Err(Error::DegenerateBlock { block: 1 }));
    }

    #[test]
    fn infinity_norm_policy_rejects_endpoint() {
        // Single-row blocks have ‖aaᵀ‖_∞ = λmax, so 2/κ is the endpoint.
        assert!(matches!(
            thetas_with_policy(&example1(), ThetaPolicy::InfinityNormBound),
            Err(Error::StepSizeOutOfRange { .. })
        ));
        let blk = Block::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]], &[0.0, 0.0]).unwrap();
        let sys = PartitionedSystem::new(vec![blk]).unwrap();
        let t = thetas_with_policy(&sys, ThetaPolicy::InfinityNormBound).unwrap();
        // AAᵀ = [[1,1],[1,2]], ‖·‖_∞ = 3
        assert_relative_eq!(t[0], 2.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn tilde_block_for_example1_agent1() {
        let tilde = build_tilde(&example1(), &[1.0 / 6.0, 1.0 / 24.0, 1.0 / 54.0]).unwrap();
        let (mat, off) = &tilde.blocks()[0];
        // I₃ − (1/6)·[1,2,1]ᵀ[1,2,1] computed by hand
        let want = DMatrix::from_row_slice(
            3,
            3,
            &[5.0 / 6.0, -1.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0, -1.0 / 6.0, -1.0 / 3.0, 5.0 / 6.0],
        );
        assert_relative_eq!(*mat, want, epsilon = 1e-15);
        assert_relative_eq!(*off, DVector::from_vec(vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 6.0]), epsilon = 1e-15);
    }

    #[test]
    fn identity_block_tilde_is_zero_plus_offset() {
        let c = DVector::from_vec(vec![1.5, -2.0]);
        let sys = PartitionedSystem::new(vec![Block::new(DMatrix::identity(2, 2), c.clone()).unwrap()]).unwrap();
        let tilde = build_tilde(&sys, &[1.0]).unwrap();
        assert_relative_eq!(tilde.blocks()[0].0, DMatrix::zeros(2, 2));
        assert_relative_eq!(tilde.blocks()[0].1, c);
    }

    #[test]
    fn out_of_range_theta_rejected() {
        let sys = example1();
        assert!(matches!(
            build_tilde(&sys, &[2.0 / 6.0, 1.0 / 24.0, 1.0 / 54.0]),
            Err(Error::StepSizeOutOfRange { block: 1, .. })
        ));
        assert!(matches!(
            build_tilde(&sys, &[0.0, 1.0 / 24.0, 1.0 / 54.0]),
            Err(Error::StepSizeOutOfRange { block: 1, .. })
        ));
        assert!(matches!(build_tilde(&sys, &[0.1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn residual_examples() {
        let sol = StackedState::consensus(3, &DVector::from_vec(vec![1.0, 0.0, -1.0]));
        assert_relative_eq!(example2().residual(&sol).unwrap(), 0.0);
        assert_relative_eq!(example1().residual(&StackedState::zeros(3, 3)).unwrap(), 14.0);
        assert!(example1().residual(&StackedState::zeros(2, 3)).is_err());
    }

    #[test]
    fn consensus_error_examples() {
        let v = DVector::from_vec(vec![0.3, -1.0]);
        assert_eq!(consensus_error(&StackedState::consensus(4, &v)), 0.0);
        let x = StackedState::from_agents(&[vec![0.0], vec![2.0]]).unwrap();
        assert_relative_eq!(consensus_error(&x), 2.0);
        let x = StackedState::from_agents(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_relative_eq!(consensus_error(&x), 2.0);
    }
}
