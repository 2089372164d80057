//! Ready-made problem instances: the two three-agent systems used for
//! reproduction runs and a seeded generator of small random consistent ones.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{GraphUniverse, WeightedGraph};
use crate::problem::{Block, PartitionedSystem, StackedState};

fn single_rows(a: &[[f64; 3]; 3], b: [f64; 3]) -> PartitionedSystem {
    let blocks = a
        .iter()
        .zip(b)
        .map(|(r, bi)| Block::from_rows(&[r.to_vec()], &[bi]).expect("static block"))
        .collect();
    PartitionedSystem::new(blocks).expect("static system")
}

/// Rank-one system `x + 2y + z = 1` split as three scaled copies.
pub fn example1_system() -> PartitionedSystem {
    single_rows(&[[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [3.0, 6.0, 3.0]], [1.0, 2.0, 3.0])
}

/// Lower-triangular system with unique solution `(1, 0, −1)`.
pub fn example2_system() -> PartitionedSystem {
    single_rows(&[[1.0, 0.0, 0.0], [2.0, 1.0, 0.0], [3.0, 1.0, 2.0]], [1.0, 2.0, 1.0])
}

pub fn example1_x0() -> StackedState {
    StackedState::from_agents(&[vec![-3.0, 1.0, 2.0], vec![2.0, -2.0, 1.0], vec![1.0, 3.0, -1.0]])
        .expect("static state")
}

/// Complete graph on `m` agents with uniform weights `1/m`.
pub fn complete_graph(m: usize) -> WeightedGraph {
    WeightedGraph::from_matrix("complete", DMatrix::from_element(m, m, 1.0 / m as f64)).expect("square")
}

/// Uniform random state in `[−h, h]^{mq}` from a seed.
pub fn random_state(m: usize, q: usize, half_width: f64, seed: u64) -> StackedState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    StackedState::from_vector(m, q, DVector::from_fn(m * q, |_, _| rng.gen_range(-half_width..=half_width)))
}

/// Edges of the four-agent ring with one chord used for gossip runs (0-based).
pub const GOSSIP4_EDGES: [(usize, usize); 5] = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)];

/// Four agents, one row each, in ℝ³; unique solution `(1, −2, 0.5)`.
pub fn gossip4_system() -> PartitionedSystem {
    let rows = [[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 2.0, -1.0]];
    let sol = DVector::from_vec(vec![1.0, -2.0, 0.5]);
    let blocks = rows
        .iter()
        .map(|r| {
            let a = DMatrix::from_row_slice(1, 3, r);
            let b = &a * &sol;
            Block::new(a, b).expect("static block")
        })
        .collect();
    PartitionedSystem::new(blocks).expect("static system")
}

/// Size limits for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct InstanceLimits {
    pub max_agents: usize,
    pub max_dim: usize,
    pub max_graphs: usize,
    pub max_rows_per_agent: usize,
}

impl Default for InstanceLimits {
    fn default() -> Self {
        Self {
            max_agents: 5,
            max_dim: 4,
            max_graphs: 4,
            max_rows_per_agent: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub system: PartitionedSystem,
    pub universe: GraphUniverse,
    /// A solution of the stacked system, so the instance is consistent.
    pub solution: DVector<f64>,
}

/// A consistent system with integer coefficients in `[−3, 3]` and a universe
/// whose union is connected: a random spanning tree is dealt across the
/// graphs, extra random edges are added, and each graph gets Metropolis
/// weights. With `directed`, one graph is replaced by a lazy directed cycle
/// `(1 − a) I + a P`, which is doubly stochastic but not symmetric.
pub fn random_instance(seed: u64, limits: InstanceLimits, directed: bool) -> Result<RandomInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(2..=limits.max_agents.max(2));
    let q = rng.gen_range(1..=limits.max_dim.max(1));
    let n_graphs = rng.gen_range(1..=limits.max_graphs.max(1));

    let solution = DVector::from_fn(q, |_, _| rng.gen_range(-2i32..=2) as f64);
    let mut blocks = Vec::with_capacity(m);
    for _ in 0..m {
        let rows = rng.gen_range(1..=limits.max_rows_per_agent.max(1));
        let mut a = DMatrix::from_fn(rows, q, |_, _| rng.gen_range(-3i32..=3) as f64);
        for r in 0..rows {
            if a.row(r).iter().all(|&v| v == 0.0) {
                a[(r, rng.gen_range(0..q))] = 1.0;
            }
        }
        let b = &a * &solution;
        blocks.push(Block::new(a, b)?);
    }
    let system = PartitionedSystem::new(blocks)?;

    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut edge_sets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    for w in order.windows(2) {
        edge_sets[rng.gen_range(0..n_graphs)].push((w[0].min(w[1]), w[0].max(w[1])));
    }
    for set in edge_sets.iter_mut() {
        for i in 0..m {
            for j in (i + 1)..m {
                if rng.gen_bool(0.2) && !set.contains(&(i, j)) {
                    set.push((i, j));
                }
            }
        }
    }
    let mut graphs = edge_sets
        .iter()
        .enumerate()
        .map(|(k, e)| WeightedGraph::metropolis(format!("g{}", k + 1), m, e))
        .collect::<Result<Vec<_>>>()?;
    if directed {
        let a = rng.gen_range(0.2..0.8);
        let mut w = DMatrix::identity(m, m) * (1.0 - a);
        for i in 0..m {
            w[(i, (i + 1) % m)] += a;
        }
        graphs.push(WeightedGraph::from_matrix("cycle", w)?);
    }
    Ok(RandomInstance {
        system,
        universe: GraphUniverse::new(graphs)?,
        solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{validate_doubly_stochastic, validate_union_connectivity, STOCHASTIC_TOL};

    #[test]
    fn random_instances_are_valid() {
        for seed in 0..30 {
            let inst = random_instance(seed, InstanceLimits::default(), seed % 2 == 0).unwrap();
            let x = StackedState::consensus(inst.system.m(), &inst.solution);
            assert!(inst.system.residual(&x).unwrap() < 1e-20);
            assert!(validate_union_connectivity(&inst.universe).unwrap().pass);
            for g in inst.universe.graphs() {
                assert!(validate_doubly_stochastic(g, STOCHASTIC_TOL).pass);
            }
        }
    }
}
