//! Weighted communication graphs and the finite universe they are drawn from.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{affine_solution_set, sorted_eigenvalues};
use crate::problem::StackedState;

/// Row/column sum tolerance for doubly stochastic weights.
pub const STOCHASTIC_TOL: f64 = 1e-10;
/// Threshold on Re(λ₂) for the spectral connectivity test.
pub const SPECTRAL_TOL: f64 = 1e-8;

/// A digraph on `m` agents with weight matrix `W`; `W[(i, j)]` is the weight
/// agent `i` puts on the estimate received from agent `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    pub label: String,
    w: DMatrix<f64>,
}

impl WeightedGraph {
    /// Builds a graph from 0-based `(i, j, weight)` triples. Each triple sets
    /// `W_ij` (and `W_ji` when `undirected`). Missing self-weights default to
    /// `1 − Σ_j W_ij`. Self-loops in the edge list are rejected.
    pub fn from_edges(
        label: impl Into<String>,
        m: usize,
        edges: &[(usize, usize, f64)],
        self_weights: Option<&[f64]>,
        undirected: bool,
    ) -> Result<Self> {
        let label = label.into();
        if m == 0 {
            return Err(Error::InvalidGraph(format!("{label}: no agents")));
        }
        let mut w = DMatrix::zeros(m, m);
        for &(i, j, weight) in edges {
            if i >= m || j >= m {
                return Err(Error::InvalidGraph(format!(
                    "{label}: edge ({}, {}) references an agent outside 1..={m}",
                    i + 1,
                    j + 1
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!(
                    "{label}: self-loop ({}, {}) in edge list; use self_weights",
                    i + 1,
                    j + 1
                )));
            }
            w[(i, j)] = weight;
            if undirected {
                w[(j, i)] = weight;
            }
        }
        match self_weights {
            Some(s) => {
                if s.len() != m {
                    return Err(Error::InvalidGraph(format!(
                        "{label}: {} self weights for {m} agents",
                        s.len()
                    )));
                }
                for (i, &v) in s.iter().enumerate() {
                    w[(i, i)] = v;
                }
            }
            None => {
                for i in 0..m {
                    let off: f64 = w.row(i).iter().sum();
                    w[(i, i)] = 1.0 - off;
                }
            }
        }
        Ok(Self { label, w })
    }

    /// Metropolis weights on an undirected edge list:
    /// `W_ij = 1 / (1 + max(d_i, d_j))`, self-weight fills the row to 1.
    pub fn metropolis(label: impl Into<String>, m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let label = label.into();
        let mut adj = vec![vec![false; m]; m];
        for &(i, j) in edges {
            if i >= m || j >= m || i == j {
                return Err(Error::InvalidGraph(format!(
                    "{label}: bad undirected edge ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
            adj[i][j] = true;
            adj[j][i] = true;
        }
        let deg: Vec<usize> = adj.iter().map(|r| r.iter().filter(|&&b| b).count()).collect();
        let mut triples = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                if adj[i][j] {
                    triples.push((i, j, 1.0 / (1.0 + deg[i].max(deg[j]) as f64)));
                }
            }
        }
        Self::from_edges(label, m, &triples, None, true)
    }

    /// Pairwise averaging on edge `(i, j)`: `W = I − ½(e_i − e_j)(e_i − e_j)ᵀ`.
    pub fn pairwise(m: usize, i: usize, j: usize) -> Result<Self> {
        Self::from_edges(format!("edge-{}-{}", i + 1, j + 1), m, &[(i, j, 0.5)], None, true)
    }

    pub fn identity(label: impl Into<String>, m: usize) -> Self {
        Self {
            label: label.into(),
            w: DMatrix::identity(m, m),
        }
    }

    /// Wraps an explicit weight matrix; the edge set is its off-diagonal support.
    pub fn from_matrix(label: impl Into<String>, w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() || w.nrows() == 0 {
            return Err(Error::InvalidGraph("weight matrix must be square and nonempty".into()));
        }
        Ok(Self { label: label.into(), w })
    }

    /// `½(I + W)`: same edge set, different weights.
    pub fn lazy(&self) -> Self {
        let m = self.m();
        Self {
            label: format!("{}-lazy", self.label),
            w: (DMatrix::identity(m, m) + &self.w) * 0.5,
        }
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Off-diagonal support as 0-based `(i, j)` pairs, `W_ij > tol`.
    pub fn edge_set(&self, tol: f64) -> Vec<(usize, usize)> {
        let m = self.m();
        let mut out = Vec::new();
        for i in 0..m {
            for j in 0..m {
                if i != j && self.w[(i, j)] > tol {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// `(𝒲 ⊗ I_q) x` without forming the Kronecker product.
    pub fn apply_lifted(&self, x: &StackedState) -> StackedState {
        let (m, q) = (x.m(), x.q());
        debug_assert_eq!(m, self.m());
        let mut out = DVector::zeros(m * q);
        for i in 0..m {
            let mut acc = out.rows_mut(i * q, q);
            for j in 0..m {
                let wij = self.w[(i, j)];
                if wij != 0.0 {
                    acc.axpy(wij, &x.agent(j), 1.0);
                }
            }
        }
        StackedState::from_vector(m, q, out)
    }

    /// Dense `𝒲 ⊗ I_q`. Oracle use only.
    pub fn lifted_dense(&self, q: usize) -> DMatrix<f64> {
        self.w.kronecker(&DMatrix::identity(q, q))
    }
}

/// The linear action `x ↦ (𝒲 ⊗ I_q) x` of a graph on stacked states.
#[derive(Debug, Clone, Copy)]
pub struct Lift<'a> {
    graph: &'a WeightedGraph,
    q: usize,
}

pub fn lift(graph: &WeightedGraph, q: usize) -> Lift<'_> {
    Lift { graph, q }
}

impl Lift<'_> {
    pub fn apply(&self, x: &StackedState) -> StackedState {
        debug_assert_eq!(x.q(), self.q);
        self.graph.apply_lifted(x)
    }

    pub fn dim(&self) -> usize {
        self.graph.m() * self.q
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StochasticityReport {
    pub label: String,
    pub pass: bool,
    pub row_sums: Vec<f64>,
    pub column_sums: Vec<f64>,
    /// 1-based rows whose sum is off by more than the tolerance.
    pub bad_rows: Vec<usize>,
    pub bad_columns: Vec<usize>,
    /// 1-based `(i, j)` of entries below `−tol`.
    pub negative_entries: Vec<(usize, usize)>,
}

pub fn validate_doubly_stochastic(g: &WeightedGraph, tol: f64) -> StochasticityReport {
    let w = g.weights();
    let row_sums: Vec<f64> = w.row_iter().map(|r| r.sum()).collect();
    let column_sums: Vec<f64> = w.column_iter().map(|c| c.sum()).collect();
    let off = |s: &f64| (s - 1.0).abs() > tol;
    let bad_rows: Vec<usize> = row_sums.iter().enumerate().filter(|(_, s)| off(s)).map(|(i, _)| i + 1).collect();
    let bad_columns: Vec<usize> = column_sums.iter().enumerate().filter(|(_, s)| off(s)).map(|(i, _)| i + 1).collect();
    let mut negative_entries = Vec::new();
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            if w[(i, j)] < -tol {
                negative_entries.push((i + 1, j + 1));
            }
        }
    }
    StochasticityReport {
        label: g.label.clone(),
        pass: bad_rows.is_empty() && bad_columns.is_empty() && negative_entries.is_empty(),
        row_sums,
        column_sums,
        bad_rows,
        bad_columns,
        negative_entries,
    }
}

/// The finite set of graphs a random process draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphUniverse {
    graphs: Vec<WeightedGraph>,
    m: usize,
    core: Option<Vec<usize>>,
}

impl GraphUniverse {
    pub fn new(graphs: Vec<WeightedGraph>) -> Result<Self> {
        let m = graphs
            .first()
            .map(WeightedGraph::m)
            .ok_or_else(|| Error::InvalidGraph("universe must contain at least one graph".into()))?;
        if let Some(g) = graphs.iter().find(|g| g.m() != m) {
            return Err(Error::InvalidGraph(format!(
                "{} has {} agents, expected {m}",
                g.label,
                g.m()
            )));
        }
        Ok(Self { graphs, m, core: None })
    }

    /// One pairwise-averaging graph per undirected edge, in edge order.
    pub fn per_edge_gossip(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let graphs = edges
            .iter()
            .map(|&(i, j)| WeightedGraph::pairwise(m, i, j))
            .collect::<Result<Vec<_>>>()?;
        Self::new(graphs)
    }

    /// Designates the subset `K` (0-based graph indices).
    pub fn with_core(mut self, core: Vec<usize>) -> Result<Self> {
        if core.is_empty() {
            return Err(Error::InvalidGraph("designated core must be nonempty".into()));
        }
        if let Some(&k) = core.iter().find(|&&k| k >= self.graphs.len()) {
            return Err(Error::BadGraphIndex {
                index: k,
                len: self.graphs.len(),
            });
        }
        self.core = Some(core);
        Ok(self)
    }

    pub fn graphs(&self) -> &[WeightedGraph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn core(&self) -> Option<&[usize]> {
        self.core.as_deref()
    }

    pub fn graph(&self, index: usize) -> Result<&WeightedGraph> {
        self.graphs.get(index).ok_or(Error::BadGraphIndex {
            index,
            len: self.graphs.len(),
        })
    }

    /// Applies `f` to every graph's weights, keeping labels and the core.
    pub fn map_weights(&self, f: impl Fn(&WeightedGraph) -> Result<WeightedGraph>) -> Result<Self> {
        let graphs = self.graphs.iter().map(f).collect::<Result<Vec<_>>>()?;
        let mut u = Self::new(graphs)?;
        u.core = self.core.clone();
        Ok(u)
    }

    /// `M = Σ_ω (I_m − 𝒲(ω))`.
    pub fn union_laplacian(&self) -> DMatrix<f64> {
        let m = self.m;
        self.graphs
            .iter()
            .fold(DMatrix::zeros(m, m), |acc, g| acc + DMatrix::identity(m, m) - g.weights())
    }

    /// Dimension of `{z ∈ ℝ^m : 𝒲(k) z = z for all k in subset}`.
    pub fn common_fixed_dim(&self, subset: &[usize]) -> usize {
        let m = self.m;
        let mut c = DMatrix::zeros(m * subset.len(), m);
        for (r, &k) in subset.iter().enumerate() {
            c.rows_mut(r * m, m)
                .copy_from(&(DMatrix::identity(m, m) - self.graphs[k].weights()));
        }
        affine_solution_set(&c, &DVector::zeros(c.nrows()), 1e-10).dim()
    }

    /// Union of all off-diagonal supports is strongly connected.
    pub fn union_strongly_connected(&self) -> bool {
        let m = self.m;
        let mut adj = vec![vec![false; m]; m];
        for g in &self.graphs {
            for (i, j) in g.edge_set(STOCHASTIC_TOL) {
                // information flows j -> i
                adj[j][i] = true;
            }
        }
        let reach = |forward: bool| {
            let mut seen = vec![false; m];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                for v in 0..m {
                    let e = if forward { adj[u][v] } else { adj[v][u] };
                    if e && !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityReport {
    pub pass: bool,
    /// Re(λ₂) of `Σ(I − 𝒲)`; `None` when `m = 1`.
    pub lambda2_re: Option<f64>,
    pub strongly_connected: bool,
}

/// Spectral test `Re λ₂(Σ(I − 𝒲)) > 0`, cross-checked against directed
/// reachability on the union support.
pub fn validate_union_connectivity(u: &GraphUniverse) -> Result<ConnectivityReport> {
    let strongly_connected = u.union_strongly_connected();
    if u.m() == 1 {
        return Ok(ConnectivityReport {
            pass: true,
            lambda2_re: None,
            strongly_connected,
        });
    }
    let ev = sorted_eigenvalues(&u.union_laplacian())
        .ok_or_else(|| Error::InternalConsistency("eigenvalue iteration did not converge".into()))?;
    let lambda2 = ev[1].re;
    let spectral = lambda2 > SPECTRAL_TOL;
    if spectral != strongly_connected {
        return Err(Error::InternalConsistency(format!(
            "spectral connectivity test (Re λ2 = {lambda2:e}) disagrees with reachability ({strongly_connected})"
        )));
    }
    Ok(ConnectivityReport {
        pass: spectral,
        lambda2_re: Some(lambda2),
        strongly_connected,
    })
}
