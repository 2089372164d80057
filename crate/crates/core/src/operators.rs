//! The random operators behind the iteration and sampling harnesses for
//! their (firm) nonexpansivity.
//!
//! With `T(ω, x) = (𝒲(ω) ⊗ I_q) x` and `H(x) = Ãx + b̃`:
//!
//! ```text
//! D(ω, x)  = (1 − β) T(ω, x) + β H(x)
//! S(ω, x)  = (1 − β) T(ω, x) + β Ãx
//! Q₁(ω, x) = ½ x + ½ D(ω, x)
//! Q₂(ω, x) = ½ x + ½ S(ω, x)
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::GraphUniverse;
use crate::linalg::{affine_solution_set, AffineSet};
use crate::oracle::build_constraints;
use crate::problem::{StackedState, TildeSystem};

/// Relative rank threshold for the small dense fixed-set solves.
pub const FIXED_SET_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
pub struct OperatorBundle<'a> {
    universe: &'a GraphUniverse,
    tilde: &'a TildeSystem,
    beta: f64,
}

impl<'a> OperatorBundle<'a> {
    pub fn new(universe: &'a GraphUniverse, tilde: &'a TildeSystem, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::BetaOutOfRange(beta));
        }
        if universe.m() != tilde.m() {
            return Err(Error::Dimension(format!(
                "universe has {} agents, system has {}",
                universe.m(),
                tilde.m()
            )));
        }
        Ok(Self { universe, tilde, beta })
    }

    pub fn universe(&self) -> &'a GraphUniverse {
        self.universe
    }

    pub fn tilde(&self) -> &'a TildeSystem {
        self.tilde
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn m(&self) -> usize {
        self.tilde.m()
    }

    pub fn q(&self) -> usize {
        self.tilde.q()
    }

    pub fn dim(&self) -> usize {
        self.m() * self.q()
    }

    fn check(&self, x: &StackedState) -> Result<()> {
        if x.m() != self.m() || x.q() != self.q() {
            return Err(Error::Dimension(format!(
                "state is {}x{}, operators act on {}x{}",
                x.m(),
                x.q(),
                self.m(),
                self.q()
            )));
        }
        Ok(())
    }

    pub fn eval_t(&self, graph: usize, x: &StackedState) -> Result<StackedState> {
        self.check(x)?;
        Ok(self.universe.graph(graph)?.apply_lifted(x))
    }

    pub fn eval_h(&self, x: &StackedState) -> Result<StackedState> {
        self.check(x)?;
        Ok(self.tilde.apply(x))
    }

    pub fn eval_d(&self, graph: usize, x: &StackedState) -> Result<StackedState> {
        let t = self.eval_t(graph, x)?;
        let h = self.tilde.apply(x);
        Ok(StackedState::from_vector(
            self.m(),
            self.q(),
            t.data * (1.0 - self.beta) + h.data * self.beta,
        ))
    }

    pub fn eval_s(&self, graph: usize, x: &StackedState) -> Result<StackedState> {
        let t = self.eval_t(graph, x)?;
        let a = self.tilde.apply_linear(x);
        Ok(StackedState::from_vector(
            self.m(),
            self.q(),
            t.data * (1.0 - self.beta) + a.data * self.beta,
        ))
    }

    /// One step of the random Krasnoselskii–Mann iteration.
    pub fn eval_q1(&self, graph: usize, x: &StackedState) -> Result<StackedState> {
        let d = self.eval_d(graph, x)?;
        Ok(StackedState::from_vector(self.m(), self.q(), (&x.data + d.data) * 0.5))
    }

    pub fn eval_q2(&self, graph: usize, x: &StackedState) -> Result<StackedState> {
        let s = self.eval_s(graph, x)?;
        Ok(StackedState::from_vector(self.m(), self.q(), (&x.data + s.data) * 0.5))
    }

    /// Dense linear part `(1 − β)(𝒲(ω) ⊗ I_q) + βÃ` of `D` and `S`.
    pub fn dense_mix(&self, graph: usize) -> Result<DMatrix<f64>> {
        let w = self.universe.graph(graph)?.lifted_dense(self.q());
        Ok(w * (1.0 - self.beta) + self.tilde.dense_linear() * self.beta)
    }

    fn stacked_fixed_set(&self, offset: Option<&DVector<f64>>) -> Result<AffineSet> {
        let n = self.dim();
        let k = self.universe.len();
        let mut c = DMatrix::zeros(k * n, n);
        let mut d = DVector::zeros(k * n);
        for g in 0..k {
            c.rows_mut(g * n, n)
                .copy_from(&(DMatrix::identity(n, n) - self.dense_mix(g)?));
            if let Some(off) = offset {
                d.rows_mut(g * n, n).copy_from(&(off * self.beta));
            }
        }
        Ok(affine_solution_set(&c, &d, FIXED_SET_RANK_TOL))
    }

    /// `FVP(D)`: solutions of `x = D(ω, x)` for every graph.
    pub fn fvp_d(&self) -> Result<AffineSet> {
        self.stacked_fixed_set(Some(&self.tilde.offset()))
    }

    /// `FVP(S)`: solutions of `x = S(ω, x)` for every graph.
    pub fn fvp_s(&self) -> Result<AffineSet> {
        self.stacked_fixed_set(None)
    }

    /// `Fix(H) ∩ FVP(T)` from the split constraint stack.
    pub fn fix_h_cap_fvp_t(&self) -> AffineSet {
        let stack = build_constraints(self.universe, self.tilde);
        let (c, d) = stack.dense();
        affine_solution_set(&c, &d, FIXED_SET_RANK_TOL)
    }
}

/// Sampling setup for the property harnesses.
#[derive(Debug, Clone, Copy)]
pub struct CheckConfig {
    pub trials: usize,
    /// Points are drawn uniformly from `[−half_width, half_width]^dim`.
    pub half_width: f64,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            half_width: 10.0,
            seed: 0,
        }
    }
}

/// Outcome of a sampled inequality check. `worst_margin` is the smallest
/// observed `rhs − lhs`; it may be slightly negative within slack.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub property: String,
    pub trials: usize,
    pub violations: usize,
    pub worst_margin: f64,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Additive slack `1e−9 · (1 + ‖x − y‖²)`.
pub fn default_slack(dist_sq: f64) -> f64 {
    1e-9 * (1.0 + dist_sq)
}

fn sample_pairs(dim: usize, cfg: &CheckConfig) -> impl Iterator<Item = (DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.half_width;
    (0..cfg.trials).map(move |_| {
        let x = DVector::from_fn(dim, |_, _| rng.gen_range(-h..=h));
        let y = DVector::from_fn(dim, |_, _| rng.gen_range(-h..=h));
        (x, y)
    })
}

/// `‖F(x) − F(y)‖ ≤ ‖x − y‖` on random pairs.
pub fn check_nonexpansive<F>(name: &str, map: F, dim: usize, cfg: &CheckConfig) -> PropertyReport
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for (x, y) in sample_pairs(dim, cfg) {
        let diff = &x - &y;
        let img = map(&x) - map(&y);
        let margin = diff.norm() - img.norm();
        worst = worst.min(margin);
        if margin < -default_slack(diff.norm_squared()) {
            violations += 1;
        }
    }
    PropertyReport {
        property: format!("{name} nonexpansive"),
        trials: cfg.trials,
        violations,
        worst_margin: worst,
    }
}

/// `‖F(x) − F(y)‖² ≤ ⟨F(x) − F(y), x − y⟩` on random pairs.
pub fn check_firmly_nonexpansive<F>(name: &str, map: F, dim: usize, cfg: &CheckConfig) -> PropertyReport
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for (x, y) in sample_pairs(dim, cfg) {
        let diff = &x - &y;
        let img = map(&x) - map(&y);
        let margin = img.dot(&diff) - img.norm_squared();
        worst = worst.min(margin);
        if margin < -default_slack(diff.norm_squared()) {
            violations += 1;
        }
    }
    PropertyReport {
        property: format!("{name} firmly nonexpansive"),
        trials: cfg.trials,
        violations,
        worst_margin: worst,
    }
}

/// Adapts a stacked-state operator to the vector form the harnesses expect.
pub fn as_vector_map<'b>(
    m: usize,
    q: usize,
    f: impl Fn(&StackedState) -> Result<StackedState> + 'b,
) -> impl Fn(&DVector<f64>) -> DVector<f64> + 'b {
    move |v| {
        f(&StackedState::from_vector(m, q, v.clone()))
            .expect("operator evaluation on well-formed state")
            .data
    }
}
