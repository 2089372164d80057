//! Experiment configuration files (TOML).
//!
//! Agent and graph indices are 1-based in files and 0-based in memory.
//! Numbers may be written as TOML numbers or as `"p/q"` fraction strings.

use std::fs;
use std::path::{Path, PathBuf};

use kmconsensus::engine::{DEFAULT_MAX_ITERS, DEFAULT_STOP_TOL};
use kmconsensus::graph::{GraphUniverse, WeightedGraph};
use kmconsensus::instances::{example1_x0, random_state};
use kmconsensus::problem::{Block, PartitionedSystem, StackedState, ThetaPolicy};
use kmconsensus::process::{ProcessSpec, ProcessVariant};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A TOML number or a `"p/q"` string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Num {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Num {
    pub fn value(&self, field: &str) -> Result<f64, CliError> {
        match self {
            Num::Int(i) => Ok(*i as f64),
            Num::Float(f) => Ok(*f),
            Num::Text(s) => parse_fraction(s).ok_or_else(|| CliError::field(field, format!("cannot parse number {s:?}"))),
        }
    }
}

fn parse_fraction(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.split_once('/') {
        Some((p, q)) => {
            let (p, q): (f64, f64) = (p.trim().parse().ok()?, q.trim().parse().ok()?);
            (q != 0.0).then_some(p / q)
        }
        None => s.parse().ok(),
    }
}

fn values(nums: &[Num], field: &str) -> Result<Vec<f64>, CliError> {
    nums.iter()
        .enumerate()
        .map(|(k, n)| n.value(&format!("{field}[{k}]")))
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub rows: Option<Vec<Vec<Num>>>,
    pub b: Option<Vec<Num>>,
    /// CSV with one equation per line; last column is the right-hand side.
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub blocks: Vec<BlockSpec>,
    pub thetas: Option<Vec<Num>>,
    #[serde(default)]
    pub theta_policy: ThetaPolicy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub label: Option<String>,
    /// `[i, j, weight]`, or `[i, j]` with `auto_stochastic`.
    #[serde(default)]
    pub edges: Vec<Vec<Num>>,
    pub self_weights: Option<Vec<Num>>,
    #[serde(default)]
    pub auto_stochastic: bool,
    #[serde(default = "yes")]
    pub undirected: bool,
    /// Use the identity weight matrix (no communication).
    #[serde(default)]
    pub identity: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct UniverseSpec {
    #[serde(default)]
    pub graphs: Vec<GraphSpec>,
    /// Appends one pairwise-averaging graph per listed undirected edge.
    pub gossip_edges: Option<Vec<[usize; 2]>>,
    /// Designated core set `K`, 1-based graph indices.
    pub core: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub variant: String,
    #[serde(default)]
    pub seed: u64,
    pub probabilities: Option<Vec<Num>>,
    pub transition: Option<Vec<Vec<Num>>>,
    pub initial: Option<Vec<Num>>,
    pub order: Option<Vec<usize>>,
    pub edges: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum X0Spec {
    Preset(String),
    Agents(Vec<Vec<Num>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub beta: Num,
    pub x0: X0Spec,
    pub max_iters: Option<usize>,
    pub stop_tol: Option<f64>,
    pub record_stride: Option<usize>,
    pub trials: Option<usize>,
    /// Inclusive iteration window for the decay-rate fit.
    pub decay_window: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub betas: Option<Vec<f64>>,
    pub weightings: Option<Vec<String>>,
    pub seeds: Option<Vec<u64>>,
    pub trials: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

/// The file as written.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub universe: UniverseSpec,
    pub process: ProcessConfig,
    pub run: RunSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// A parsed config with everything resolved to library objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub path: PathBuf,
    /// SHA-256 over the config text and every referenced CSV, hex.
    pub hash: String,
    pub system: PartitionedSystem,
    pub thetas: Option<Vec<f64>>,
    pub theta_policy: ThetaPolicy,
    pub universe: GraphUniverse,
    pub process: ProcessSpec,
    pub beta: f64,
    pub x0: StackedState,
    pub max_iters: usize,
    pub stop_tol: f64,
    pub record_stride: usize,
    pub trials: usize,
    pub decay_window: [usize; 2],
    pub sweep: SweepSpec,
    pub out_dir: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let raw: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let exp = Self::resolve(raw, path, base, &mut hasher)?;
        Ok(exp.with_hash(hex::encode(hasher.finalize())))
    }

    fn with_hash(mut self, hash: String) -> Self {
        self.hash = hash;
        self
    }

    fn resolve(raw: ExperimentConfig, path: &Path, base: &Path, hasher: &mut Sha256) -> Result<Self, CliError> {
        let mut blocks = Vec::with_capacity(raw.problem.blocks.len());
        for (k, spec) in raw.problem.blocks.iter().enumerate() {
            blocks.push(resolve_block(spec, &format!("problem.blocks[{k}]"), base, hasher)?);
        }
        let system = PartitionedSystem::preprocess(blocks).map_err(|e| CliError::field("problem", e.to_string()))?;
        let (m, q) = (system.m(), system.q());
        let thetas = raw
            .problem
            .thetas
            .as_deref()
            .map(|t| values(t, "problem.thetas"))
            .transpose()?;

        let universe = resolve_universe(&raw.universe, m)?;
        let process = resolve_process(&raw.process, &raw.universe)?;

        let run = &raw.run;
        let beta = run.beta.value("run.beta")?;
        let x0 = match &run.x0 {
            X0Spec::Preset(p) => resolve_x0_preset(p, m, q)?,
            X0Spec::Agents(rows) => {
                let agents = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| values(r, &format!("run.x0[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                StackedState::from_agents(&agents).map_err(|e| CliError::field("run.x0", e.to_string()))?
            }
        };
        if x0.m() != m || x0.q() != q {
            return Err(CliError::field(
                "run.x0",
                format!("has {} agents of dimension {}, system needs {m} x {q}", x0.m(), x0.q()),
            ));
        }
        let name = raw.name.clone().unwrap_or_else(|| {
            path.file_stem().map_or("experiment".into(), |s| s.to_string_lossy().into_owned())
        });
        let out_dir = raw
            .output
            .dir
            .clone()
            .map(|d| if d.is_absolute() { d } else { base.join(d) })
            .unwrap_or_else(|| PathBuf::from("out").join(&name));
        Ok(Self {
            name,
            path: path.to_path_buf(),
            hash: String::new(),
            system,
            thetas,
            theta_policy: raw.problem.theta_policy,
            universe,
            process,
            beta,
            x0,
            max_iters: run.max_iters.unwrap_or(DEFAULT_MAX_ITERS),
            stop_tol: run.stop_tol.unwrap_or(DEFAULT_STOP_TOL),
            record_stride: run.record_stride.unwrap_or(1),
            trials: run.trials.unwrap_or(100),
            decay_window: run.decay_window.unwrap_or([5, 40]),
            sweep: raw.sweep,
            out_dir,
        })
    }
}

fn resolve_block(spec: &BlockSpec, field: &str, base: &Path, hasher: &mut Sha256) -> Result<Block, CliError> {
    let (rows, b) = match (&spec.rows, &spec.b, &spec.csv) {
        (Some(rows), Some(b), None) => {
            let rows = rows
                .iter()
                .enumerate()
                .map(|(r, row)| values(row, &format!("{field}.rows[{r}]")))
                .collect::<Result<Vec<_>, _>>()?;
            (rows, values(b, &format!("{field}.b"))?)
        }
        (None, None, Some(csv)) => read_block_csv(&base.join(csv), field, hasher)?,
        _ => {
            return Err(CliError::field(field, "give either `rows` and `b`, or `csv`"));
        }
    };
    Block::from_rows(&rows, &b).map_err(|e| CliError::field(field, e.to_string()))
}

fn read_block_csv(path: &Path, field: &str, hasher: &mut Sha256) -> Result<(Vec<Vec<f64>>, Vec<f64>), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{field}: {}: {e}", path.display())))?;
    hasher.update(text.as_bytes());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut b = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let nums = rec
            .iter()
            .map(|s| {
                parse_fraction(s)
                    .ok_or_else(|| CliError::Parse(format!("{}: record {}: bad number {s:?}", path.display(), line + 1)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if nums.len() < 2 {
            return Err(CliError::Parse(format!(
                "{}: record {} needs at least one coefficient and a right-hand side",
                path.display(),
                line + 1
            )));
        }
        let (coef, rhs) = nums.split_at(nums.len() - 1);
        rows.push(coef.to_vec());
        b.push(rhs[0]);
    }
    Ok((rows, b))
}

fn one_based(i: usize, m: usize, field: &str) -> Result<usize, CliError> {
    if i == 0 || i > m {
        return Err(CliError::field(field, format!("index {i} outside 1..={m}")));
    }
    Ok(i - 1)
}

fn resolve_universe(spec: &UniverseSpec, m: usize) -> Result<GraphUniverse, CliError> {
    let mut graphs = Vec::new();
    for (k, g) in spec.graphs.iter().enumerate() {
        let field = format!("universe.graphs[{k}]");
        let label = g.label.clone().unwrap_or_else(|| format!("G{}", k + 1));
        let graph = if g.identity {
            WeightedGraph::identity(label, m)
        } else if g.auto_stochastic {
            let edges = g
                .edges
                .iter()
                .enumerate()
                .map(|(e, pair)| {
                    let f = format!("{field}.edges[{e}]");
                    if pair.len() < 2 {
                        return Err(CliError::field(&f, "expected [i, j]"));
                    }
                    let i = one_based(pair[0].value(&f)? as usize, m, &f)?;
                    let j = one_based(pair[1].value(&f)? as usize, m, &f)?;
                    Ok((i, j))
                })
                .collect::<Result<Vec<_>, _>>()?;
            WeightedGraph::metropolis(label, m, &edges).map_err(|e| CliError::field(&field, e.to_string()))?
        } else {
            let triples = g
                .edges
                .iter()
                .enumerate()
                .map(|(e, t)| {
                    let f = format!("{field}.edges[{e}]");
                    if t.len() != 3 {
                        return Err(CliError::field(&f, "expected [i, j, weight]"));
                    }
                    let i = one_based(t[0].value(&f)? as usize, m, &f)?;
                    let j = one_based(t[1].value(&f)? as usize, m, &f)?;
                    Ok((i, j, t[2].value(&f)?))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let selfw = g
                .self_weights
                .as_deref()
                .map(|s| values(s, &format!("{field}.self_weights")))
                .transpose()?;
            WeightedGraph::from_edges(label, m, &triples, selfw.as_deref(), g.undirected)
                .map_err(|e| CliError::field(&field, e.to_string()))?
        };
        graphs.push(graph);
    }
    if let Some(edges) = &spec.gossip_edges {
        for (e, &[i, j]) in edges.iter().enumerate() {
            let f = format!("universe.gossip_edges[{e}]");
            let g = WeightedGraph::pairwise(m, one_based(i, m, &f)?, one_based(j, m, &f)?)
                .map_err(|err| CliError::field(&f, err.to_string()))?;
            graphs.push(g);
        }
    }
    let mut universe = GraphUniverse::new(graphs).map_err(|e| CliError::field("universe", e.to_string()))?;
    if let Some(core) = &spec.core {
        let n = universe.len();
        let k = core
            .iter()
            .map(|&c| one_based(c, n, "universe.core"))
            .collect::<Result<Vec<_>, _>>()?;
        universe = universe.with_core(k).map_err(|e| CliError::field("universe.core", e.to_string()))?;
    }
    Ok(universe)
}

fn resolve_process(spec: &ProcessConfig, universe: &UniverseSpec) -> Result<ProcessSpec, CliError> {
    fn need<T>(v: Option<T>, variant: &str, name: &str) -> Result<T, CliError> {
        v.ok_or_else(|| CliError::field("process", format!("variant {variant:?} needs `{name}`")))
    }
    let var = spec.variant.as_str();
    let variant = match spec.variant.as_str() {
        "iid" => ProcessVariant::Iid {
            probabilities: values(need(spec.probabilities.as_deref(), var, "probabilities")?, "process.probabilities")?,
        },
        "markov" => ProcessVariant::Markov {
            transition: need(spec.transition.as_ref(), var, "transition")?
                .iter()
                .enumerate()
                .map(|(r, row)| values(row, &format!("process.transition[{r}]")))
                .collect::<Result<Vec<_>, _>>()?,
            initial: values(need(spec.initial.as_deref(), var, "initial")?, "process.initial")?,
        },
        "gossip" => {
            let edges = spec
                .edges
                .as_ref()
                .or(universe.gossip_edges.as_ref())
                .ok_or_else(|| CliError::field("process", "gossip needs `edges` or universe.gossip_edges"))?;
            let edges = edges
                .iter()
                .map(|&[i, j]| {
                    if i == 0 || j == 0 {
                        Err(CliError::field("process.edges", "indices are 1-based"))
                    } else {
                        Ok((i - 1, j - 1))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            ProcessVariant::Gossip {
                edges,
                probabilities: spec
                    .probabilities
                    .as_deref()
                    .map(|p| values(p, "process.probabilities"))
                    .transpose()?,
            }
        }
        "cyclic" => ProcessVariant::Cyclic {
            order: need(spec.order.as_ref(), var, "order")?
                .iter()
                .map(|&k| {
                    k.checked_sub(1)
                        .ok_or_else(|| CliError::field("process.order", "indices are 1-based"))
                })
                .collect::<Result<Vec<_>, _>>()?,
        },
        other => {
            return Err(CliError::field(
                "process.variant",
                format!("unknown variant {other:?}; expected iid, markov, gossip or cyclic"),
            ))
        }
    };
    Ok(ProcessSpec::new(variant, spec.seed))
}

fn resolve_x0_preset(name: &str, m: usize, q: usize) -> Result<StackedState, CliError> {
    let name = name.trim();
    if name == "example-1" {
        return Ok(example1_x0());
    }
    if name == "zeros" {
        return Ok(StackedState::zeros(m, q));
    }
    if let Some(inner) = name.strip_prefix("random(").and_then(|s| s.strip_suffix(')')) {
        let seed: u64 = inner
            .trim()
            .parse()
            .map_err(|_| CliError::field("run.x0", format!("bad seed in {name:?}")))?;
        return Ok(random_state(m, q, 5.0, seed));
    }
    Err(CliError::field(
        "run.x0",
        format!("unknown preset {name:?}; expected example-1, zeros or random(<seed>)"),
    ))
}
