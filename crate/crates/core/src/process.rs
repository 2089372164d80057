//! Random graph-index processes.
//!
//! Every draw comes from a ChaCha8 stream seeded with the process seed;
//! trial `t` of a Monte Carlo study reads ChaCha stream number `t`, so trials
//! are independent and reproducible on any platform.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphUniverse, STOCHASTIC_TOL};

/// Stochastic rule generating the graph sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum ProcessVariant {
    /// Independent draws from a fixed distribution over the universe.
    Iid { probabilities: Vec<f64> },
    /// Time-invariant Markov chain over graph indices.
    Markov {
        transition: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
    /// One undirected edge activates per step (0-based agent pairs); the
    /// emitted graph is the universe member whose support is exactly that edge.
    Gossip {
        edges: Vec<(usize, usize)>,
        probabilities: Option<Vec<f64>>,
    },
    /// Fixed rotation through the listed graph indices.
    Cyclic { order: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    #[serde(flatten)]
    pub variant: ProcessVariant,
    pub seed: u64,
}

impl ProcessSpec {
    pub fn new(variant: ProcessVariant, seed: u64) -> Self {
        Self { variant, seed }
    }

    /// Always emits graph `index`.
    pub fn constant(index: usize) -> Self {
        Self::new(ProcessVariant::Cyclic { order: vec![index] }, 0)
    }
}

fn check_distribution(what: &str, p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::InvalidProcess(format!("{what} has {} entries, expected {n}", p.len())));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidProcess(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidProcess(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum Sampler {
    Iid(WeightedIndex<f64>),
    Markov {
        rows: Vec<WeightedIndex<f64>>,
        initial: WeightedIndex<f64>,
    },
    Gossip {
        edges: WeightedIndex<f64>,
        graph_of_edge: Vec<usize>,
    },
    Cyclic(Vec<usize>),
}

/// A validated process bound to a universe.
#[derive(Debug, Clone)]
pub struct GraphProcess {
    spec: ProcessSpec,
    n_graphs: usize,
    sampler: Sampler,
    /// Per-step marginal probability of each graph for independent variants.
    marginals: Option<Vec<f64>>,
}

/// Value-semantic position in a process realization.
#[derive(Debug, Clone)]
pub struct ProcessCursor {
    rng: ChaCha8Rng,
    step: u64,
    state: Option<usize>,
}

impl ProcessCursor {
    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Index of the universe graph whose support is exactly the undirected edge `{i, j}`.
fn graph_for_edge(universe: &GraphUniverse, i: usize, j: usize) -> Option<usize> {
    let mut want = vec![(i, j), (j, i)];
    want.sort_unstable();
    universe.graphs().iter().position(|g| {
        let mut got = g.edge_set(STOCHASTIC_TOL);
        got.sort_unstable();
        got == want
    })
}

impl GraphProcess {
    pub fn new(spec: ProcessSpec, universe: &GraphUniverse) -> Result<Self> {
        let n = universe.len();
        let weighted = |p: &[f64]| {
            WeightedIndex::new(p.iter().copied()).map_err(|e| Error::InvalidProcess(e.to_string()))
        };
        let (sampler, marginals) = match &spec.variant {
            ProcessVariant::Iid { probabilities } => {
                check_distribution("probabilities", probabilities, n)?;
                (Sampler::Iid(weighted(probabilities)?), Some(probabilities.clone()))
            }
            ProcessVariant::Markov { transition, initial } => {
                check_distribution("initial distribution", initial, n)?;
                if transition.len() != n {
                    return Err(Error::InvalidProcess(format!(
                        "transition matrix has {} rows, expected {n}",
                        transition.len()
                    )));
                }
                let rows = transition
                    .iter()
                    .enumerate()
                    .map(|(r, row)| {
                        check_distribution(&format!("transition row {}", r + 1), row, n)?;
                        weighted(row)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (
                    Sampler::Markov {
                        rows,
                        initial: weighted(initial)?,
                    },
                    None,
                )
            }
            ProcessVariant::Gossip { edges, probabilities } => {
                if edges.is_empty() {
                    return Err(Error::InvalidProcess("gossip needs at least one edge".into()));
                }
                let probs = match probabilities {
                    Some(p) => {
                        check_distribution("edge probabilities", p, edges.len())?;
                        p.clone()
                    }
                    None => vec![1.0 / edges.len() as f64; edges.len()],
                };
                let graph_of_edge = edges
                    .iter()
                    .map(|&(i, j)| graph_for_edge(universe, i, j).ok_or(Error::UnmodeledActivation(i + 1, j + 1)))
                    .collect::<Result<Vec<_>>>()?;
                let mut marg = vec![0.0; n];
                for (&g, &p) in graph_of_edge.iter().zip(&probs) {
                    marg[g] += p;
                }
                (
                    Sampler::Gossip {
                        edges: weighted(&probs)?,
                        graph_of_edge,
                    },
                    Some(marg),
                )
            }
            ProcessVariant::Cyclic { order } => {
                if order.is_empty() {
                    return Err(Error::InvalidProcess("cyclic order is empty".into()));
                }
                if let Some(&k) = order.iter().find(|&&k| k >= n) {
                    return Err(Error::BadGraphIndex { index: k, len: n });
                }
                (Sampler::Cyclic(order.clone()), None)
            }
        };
        Ok(Self {
            spec,
            n_graphs: n,
            sampler,
            marginals,
        })
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn n_graphs(&self) -> usize {
        self.n_graphs
    }

    /// True when the process emits the same graph at every step.
    pub fn is_deterministic(&self) -> bool {
        match &self.sampler {
            Sampler::Cyclic(order) => order.iter().all(|&k| k == order[0]),
            _ => self.marginals.as_ref().is_some_and(|p| p.iter().filter(|&&v| v > 0.0).count() == 1),
        }
    }

    /// Cursor for trial `trial`; trial 0 is the plain single-run stream.
    pub fn cursor(&self, trial: u64) -> ProcessCursor {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(trial);
        ProcessCursor { rng, step: 0, state: None }
    }

    /// Draws the next graph index and advances the cursor.
    pub fn next_graph(&self, cursor: &mut ProcessCursor) -> usize {
        let idx = match &self.sampler {
            Sampler::Iid(dist) => dist.sample(&mut cursor.rng),
            Sampler::Markov { rows, initial } => match cursor.state {
                None => initial.sample(&mut cursor.rng),
                Some(s) => rows[s].sample(&mut cursor.rng),
            },
            Sampler::Gossip { edges, graph_of_edge } => graph_of_edge[edges.sample(&mut cursor.rng)],
            Sampler::Cyclic(order) => order[(cursor.step % order.len() as u64) as usize],
        };
        cursor.state = Some(idx);
        cursor.step += 1;
        idx
    }

    /// First `n` draws of trial `trial`.
    pub fn sequence(&self, trial: u64, n: usize) -> Vec<usize> {
        let mut c = self.cursor(trial);
        (0..n).map(|_| self.next_graph(&mut c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption4Verdict {
    SatisfiedByKnownCriterion,
    Unknown,
}

#[derive(Debug, Clone, Serialize)]
pub struct Assumption4Report {
    pub verdict: Assumption4Verdict,
    /// 0-based indices of the core set used for the verdict.
    pub core: Vec<usize>,
    pub justification: String,
}

/// Candidate core sets: the designated one, else every single graph whose
/// fixed-value set already equals the universe's, else the whole universe.
fn core_candidates(universe: &GraphUniverse) -> (Vec<Vec<usize>>, String) {
    let all: Vec<usize> = (0..universe.len()).collect();
    let target = universe.common_fixed_dim(&all);
    if let Some(k) = universe.core() {
        if universe.common_fixed_dim(k) == target {
            return (vec![k.to_vec()], "designated core".into());
        }
        return (vec![], "designated core does not reproduce the common fixed-value set".into());
    }
    let singles: Vec<Vec<usize>> = all
        .iter()
        .filter(|&&k| universe.common_fixed_dim(&[k]) == target)
        .map(|&k| vec![k])
        .collect();
    if singles.is_empty() {
        (vec![all], "core defaults to the whole universe".into())
    } else {
        (singles, "single-graph core".into())
    }
}

fn fmt_core(k: &[usize]) -> String {
    let v: Vec<String> = k.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", v.join(", "))
}

/// Certifies Assumption 4 when one of the known sufficient conditions holds;
/// otherwise reports `Unknown`, never a violation.
pub fn check_assumption4(process: &GraphProcess, universe: &GraphUniverse) -> Assumption4Report {
    let (candidates, origin) = core_candidates(universe);
    let unknown = |why: String| Assumption4Report {
        verdict: Assumption4Verdict::Unknown,
        core: candidates.first().cloned().unwrap_or_default(),
        justification: why,
    };
    if candidates.is_empty() {
        return unknown(origin);
    }
    let satisfied = |k: &Vec<usize>, why: String| Assumption4Report {
        verdict: Assumption4Verdict::SatisfiedByKnownCriterion,
        core: k.clone(),
        justification: format!("{origin} K = {}: {why}", fmt_core(k)),
    };
    match &process.spec.variant {
        ProcessVariant::Iid { .. } | ProcessVariant::Gossip { .. } => {
            let p = process.marginals.as_ref().expect("independent variants carry marginals");
            for k in &candidates {
                if k.iter().all(|&g| p[g] > 0.0) {
                    let min = k.iter().map(|&g| p[g]).fold(f64::INFINITY, f64::min);
                    return satisfied(
                        k,
                        format!("independent draws with Pr >= {min} > 0 each step, so the sum of probabilities diverges"),
                    );
                }
            }
            unknown("some core graph has zero probability".into())
        }
        ProcessVariant::Markov { transition, initial } => {
            let n = initial.len();
            if !markov_irreducible(transition) {
                return unknown("Markov chain is not irreducible".into());
            }
            let drift = (0..n)
                .map(|j| ((0..n).map(|i| initial[i] * transition[i][j]).sum::<f64>() - initial[j]).abs())
                .fold(0.0, f64::max);
            if drift > STOCHASTIC_TOL {
                return unknown(format!(
                    "initial distribution is not stationary (max drift {drift:e})"
                ));
            }
            for k in &candidates {
                if k.iter().all(|&g| initial[g] > 0.0) {
                    return satisfied(k, "irreducible chain started from its stationary distribution".into());
                }
            }
            unknown("core graph has zero stationary mass".into())
        }
        ProcessVariant::Cyclic { order } => {
            for k in &candidates {
                if k.iter().all(|g| order.contains(g)) {
                    return satisfied(k, "periodic schedule visits every core graph infinitely often".into());
                }
            }
            unknown("cyclic schedule omits a core graph".into())
        }
    }
}

fn markov_irreducible(p: &[Vec<f64>]) -> bool {
    let n = p.len();
    (0..n).all(|start| {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if p[u][v] > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    })
}
