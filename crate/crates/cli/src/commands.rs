//! Subcommand implementations. Each command loads a config, validates it,
//! computes, and writes its artifacts into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kmconsensus::engine::{
    estimate_decay_rate, monte_carlo, run_trajectory, tail_nonincreasing, MonteCarloResult, RunConfig, RunRecord,
};
use kmconsensus::graph::{
    validate_doubly_stochastic, validate_union_connectivity, GraphUniverse, WeightedGraph, STOCHASTIC_TOL,
};
use kmconsensus::operators::OperatorBundle;
use kmconsensus::oracle::{build_constraints, project_affine, verify_limit, OracleResult, FEASIBILITY_TOL};
use kmconsensus::problem::{build_tilde, thetas_with_policy, StackedState, TildeSystem};
use kmconsensus::process::{check_assumption4, Assumption4Verdict, GraphProcess};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Experiment;
use crate::error::{CliError, EXIT_OK, EXIT_VALIDATION};
use crate::output::{fmt17, header, write_atomic, write_json};

/// Terminal-error tolerance used to mark runs as verified.
pub const VERIFY_TOL: f64 = 1e-6;

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub trials: Option<usize>,
    pub jobs: Option<usize>,
}

pub fn load(config: &Path, ov: &Overrides) -> Result<Experiment, CliError> {
    let mut exp = Experiment::load(config)?;
    if let Some(out) = &ov.out {
        exp.out_dir = out.clone();
    }
    if let Some(seed) = ov.seed {
        exp.process.seed = seed;
    }
    if let Some(n) = ov.max_iters {
        exp.max_iters = n;
    }
    if let Some(t) = ov.tol {
        exp.stop_tol = t;
    }
    if let Some(t) = ov.trials {
        exp.trials = t;
    }
    Ok(exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub config_hash: String,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            EXIT_OK
        } else {
            EXIT_VALIDATION
        }
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Warn => "WARN",
                Status::Fail => "FAIL",
            };
            let _ = writeln!(s, "[{tag}] {}: {}", c.name, c.detail);
        }
        s
    }
}

fn resolve_thetas(exp: &Experiment) -> kmconsensus::Result<Vec<f64>> {
    match &exp.thetas {
        Some(t) => Ok(t.clone()),
        None => thetas_with_policy(&exp.system, exp.theta_policy),
    }
}

/// Runs every assumption and range check on a loaded experiment.
pub fn validate(exp: &Experiment) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, status: Status, detail: String| {
        checks.push(Check {
            name: name.to_string(),
            status,
            detail,
        })
    };

    match resolve_thetas(exp).and_then(|t| build_tilde(&exp.system, &t).map(|_| t)) {
        Ok(t) => push("step sizes", Status::Pass, format!("theta = {t:?}")),
        Err(e) => push("step sizes", Status::Fail, e.to_string()),
    }
    if exp.beta > 0.0 && exp.beta < 1.0 {
        push("beta", Status::Pass, format!("beta = {}", exp.beta));
    } else {
        push("beta", Status::Fail, format!("beta = {} must lie strictly inside (0, 1)", exp.beta));
    }

    for (k, g) in exp.universe.graphs().iter().enumerate() {
        let r = validate_doubly_stochastic(g, STOCHASTIC_TOL);
        let name = format!("doubly stochastic: graph {} ({})", k + 1, g.label);
        if r.pass {
            push(&name, Status::Pass, "row and column sums equal 1".into());
        } else {
            push(
                &name,
                Status::Fail,
                format!(
                    "rows {:?} sums {:?}; columns {:?} sums {:?}; negative entries {:?}",
                    r.bad_rows,
                    r.bad_rows.iter().map(|&i| r.row_sums[i - 1]).collect::<Vec<_>>(),
                    r.bad_columns,
                    r.bad_columns.iter().map(|&j| r.column_sums[j - 1]).collect::<Vec<_>>(),
                    r.negative_entries
                ),
            );
        }
    }

    match validate_union_connectivity(&exp.universe) {
        Ok(r) if r.pass => push(
            "union connectivity",
            Status::Pass,
            format!("Re(lambda2) = {:?}", r.lambda2_re),
        ),
        Ok(r) => push(
            "union connectivity",
            Status::Fail,
            format!("union of graphs is not strongly connected, Re(lambda2) = {:?}", r.lambda2_re),
        ),
        Err(e) => push("union connectivity", Status::Fail, e.to_string()),
    }

    match GraphProcess::new(exp.process.clone(), &exp.universe) {
        Ok(p) => {
            push("process", Status::Pass, format!("{:?}", exp.process.variant));
            let a4 = check_assumption4(&p, &exp.universe);
            let status = match a4.verdict {
                Assumption4Verdict::SatisfiedByKnownCriterion => Status::Pass,
                Assumption4Verdict::Unknown => Status::Warn,
            };
            push("recurrence of core graphs", status, a4.justification);
        }
        Err(e) => push("process", Status::Fail, e.to_string()),
    }

    if exp.max_iters == 0 || exp.record_stride == 0 || !(exp.stop_tol >= 0.0) || exp.trials == 0 {
        push(
            "run parameters",
            Status::Fail,
            format!(
                "max_iters = {}, record_stride = {}, stop_tol = {}, trials = {} (counts must be >= 1, tolerance >= 0)",
                exp.max_iters, exp.record_stride, exp.stop_tol, exp.trials
            ),
        );
    } else {
        push("run parameters", Status::Pass, format!("max_iters = {}", exp.max_iters));
    }

    ValidationReport {
        config_hash: exp.hash.clone(),
        checks,
    }
}

/// A validated experiment with its derived objects.
pub struct Prepared {
    pub exp: Experiment,
    pub tilde: TildeSystem,
    pub process: GraphProcess,
}

pub fn prepare(exp: Experiment) -> Result<Prepared, CliError> {
    let report = validate(&exp);
    if !report.passed() {
        let msg: Vec<String> = report.failures().iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
        return Err(CliError::Validation(msg.join("; ")));
    }
    let tilde = build_tilde(&exp.system, &resolve_thetas(&exp)?)?;
    let process = GraphProcess::new(exp.process.clone(), &exp.universe)?;
    Ok(Prepared { exp, tilde, process })
}

impl Prepared {
    pub fn bundle(&self) -> Result<OperatorBundle<'_>, CliError> {
        Ok(OperatorBundle::new(&self.exp.universe, &self.tilde, self.exp.beta)?)
    }

    pub fn oracle(&self) -> Result<OracleResult, CliError> {
        oracle_for(&self.exp.universe, &self.tilde, &self.exp.x0)
    }

    pub fn run_config(&self) -> Result<RunConfig<'_>, CliError> {
        let mut cfg = RunConfig::new(&self.exp.system, self.bundle()?, &self.process, self.exp.x0.clone());
        cfg.max_iters = self.exp.max_iters;
        cfg.stop_tol = self.exp.stop_tol;
        cfg.record_stride = self.exp.record_stride;
        Ok(cfg)
    }

    fn hdr(&self) -> String {
        header(&self.exp.hash, &self.exp.process.seed.to_string(), &self.exp.name)
    }
}

fn oracle_for(universe: &GraphUniverse, tilde: &TildeSystem, x0: &StackedState) -> Result<OracleResult, CliError> {
    Ok(project_affine(&build_constraints(universe, tilde), x0, FEASIBILITY_TOL)?)
}

pub fn cmd_validate(config: &Path, ov: &Overrides) -> Result<ValidationReport, CliError> {
    Ok(validate(&load(config, ov)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleArtifact {
    pub config: String,
    pub config_hash: String,
    pub m: usize,
    pub q: usize,
    #[serde(flatten)]
    pub result: OracleResult,
}

pub fn cmd_oracle(config: &Path, ov: &Overrides) -> Result<OracleArtifact, CliError> {
    let p = prepare(load(config, ov)?)?;
    let art = OracleArtifact {
        config: p.exp.name.clone(),
        config_hash: p.exp.hash.clone(),
        m: p.tilde.m(),
        q: p.tilde.q(),
        result: p.oracle()?,
    };
    write_json(&p.exp.out_dir.join("oracle.json"), &art)?;
    Ok(art)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
    pub terminal_error: f64,
    pub terminal_residual: f64,
    pub terminal_state: Vec<f64>,
    pub x_star: Vec<f64>,
    pub nullspace_dim: usize,
    pub decay_window: [usize; 2],
    /// Least-squares per-iteration ratio of `e_n` over the window.
    pub fitted_decay_ratio: Option<f64>,
    /// `1 − ratio`, the fractional error reduction per iteration.
    pub fitted_decay_complement: Option<f64>,
    pub decay_fit_note: Option<String>,
    pub fejer_violations: usize,
    pub max_norm: f64,
    pub verified: bool,
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub summary: RunSummary,
    pub out_dir: PathBuf,
}

pub fn cmd_run(config: &Path, ov: &Overrides) -> Result<RunOutcome, CliError> {
    let p = prepare(load(config, ov)?)?;
    run_prepared(&p)
}

pub fn run_prepared(p: &Prepared) -> Result<RunOutcome, CliError> {
    let oracle = p.oracle()?;
    let x_star = oracle.state(p.tilde.m(), p.tilde.q());
    let record = run_trajectory(&p.run_config()?, Some(&x_star))?;
    let [w0, w1] = p.exp.decay_window;
    let (ratio, note) = match estimate_decay_rate(&record, w0, w1) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let summary = RunSummary {
        config: p.exp.name.clone(),
        config_hash: p.exp.hash.clone(),
        seed: p.exp.process.seed,
        beta: p.exp.beta,
        iterations: record.terminated_at,
        converged: record.converged,
        terminal_error: record.terminal_error().unwrap_or(f64::NAN),
        terminal_residual: record.entries.last().map_or(f64::NAN, |e| e.residual),
        terminal_state: record.final_state.data.iter().copied().collect(),
        x_star: oracle.x_star.clone(),
        nullspace_dim: oracle.nullspace_dim,
        decay_window: p.exp.decay_window,
        fitted_decay_ratio: ratio,
        fitted_decay_complement: ratio.map(|r| 1.0 - r),
        decay_fit_note: note,
        fejer_violations: record.fejer_violations,
        max_norm: record.max_norm,
        verified: verify_limit(&record.final_state, &x_star, VERIFY_TOL),
    };

    let out = &p.exp.out_dir;
    let hdr = p.hdr();
    let mut csv = hdr.clone();
    csv.push_str("n,e_n,residual,consensus_error,graph_index\n");
    for e in &record.entries {
        let g = e.graph.map(|g| (g + 1).to_string()).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            e.n,
            fmt17(e.error.unwrap_or(f64::NAN)),
            fmt17(e.residual),
            fmt17(e.consensus_error),
            g
        );
    }
    write_atomic(&out.join("trajectory.csv"), csv.as_bytes())?;

    let mut dat = hdr.clone();
    let mut cmp = hdr;
    cmp.push_str("n,e_n,harmonic_bound,e_n_below_bound\n");
    let e0 = record.errors().first().map_or(0.0, |&(_, e)| e);
    for (n, e) in record.errors() {
        let _ = writeln!(dat, "{n} {}", fmt17(e));
        let bound = e0 / (1.0 + n as f64);
        let _ = writeln!(cmp, "{n},{},{},{}", fmt17(e), fmt17(bound), e <= bound);
    }
    write_atomic(&out.join("error.dat"), dat.as_bytes())?;
    write_atomic(&out.join("error_vs_harmonic.csv"), cmp.as_bytes())?;
    write_json(&out.join("summary.json"), &summary)?;

    Ok(RunOutcome {
        record,
        summary,
        out_dir: out.clone(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloSummary {
    pub config: String,
    pub config_hash: String,
    pub seed: u64,
    pub trials: usize,
    pub horizon: usize,
    pub final_mse: f64,
    pub tail_nonincreasing: bool,
    pub max_terminal_error: f64,
    pub fejer_violations: usize,
}

/// Relative slack allowed between consecutive tail points of the MSE curve.
pub const MSE_TAIL_SLACK: f64 = 0.05;

pub fn cmd_montecarlo(config: &Path, ov: &Overrides) -> Result<(MonteCarloResult, MonteCarloSummary), CliError> {
    let p = prepare(load(config, ov)?)?;
    montecarlo_prepared(&p, p.exp.trials)
}

pub fn montecarlo_prepared(p: &Prepared, trials: usize) -> Result<(MonteCarloResult, MonteCarloSummary), CliError> {
    let oracle = p.oracle()?;
    let x_star = oracle.state(p.tilde.m(), p.tilde.q());
    let mc = monte_carlo(&p.run_config()?, trials, &x_star)?;
    let summary = MonteCarloSummary {
        config: p.exp.name.clone(),
        config_hash: p.exp.hash.clone(),
        seed: p.exp.process.seed,
        trials,
        horizon: p.exp.max_iters,
        final_mse: mc.mse.last().map_or(f64::NAN, |&(_, v)| v),
        tail_nonincreasing: tail_nonincreasing(&mc.mse, 0.5, MSE_TAIL_SLACK),
        max_terminal_error: mc.terminal_errors.iter().copied().fold(0.0, f64::max),
        fejer_violations: mc.fejer_violations,
    };
    let mut csv = header(
        &p.exp.hash,
        &format!("{} streams 0..{}", p.exp.process.seed, trials),
        &p.exp.name,
    );
    csv.push_str("n,mse\n");
    for &(n, v) in &mc.mse {
        let _ = writeln!(csv, "{n},{}", fmt17(v));
    }
    write_atomic(&p.exp.out_dir.join(format!("mse_{trials}.csv")), csv.as_bytes())?;
    write_json(&p.exp.out_dir.join(format!("montecarlo_{trials}.json")), &summary)?;
    Ok((mc, summary))
}

/// Alternative weight assignments on the configured edge sets.
pub fn reweight(universe: &GraphUniverse, weighting: &str) -> Result<GraphUniverse, CliError> {
    match weighting {
        "configured" => Ok(universe.clone()),
        "lazy" => Ok(universe.map_weights(|g| Ok(g.lazy()))?),
        "metropolis" => Ok(universe.map_weights(|g| {
            let edges = g.edge_set(STOCHASTIC_TOL);
            let undirected: Vec<(usize, usize)> = edges.iter().copied().filter(|&(i, j)| i < j).collect();
            if undirected.len() * 2 != edges.len() || undirected.iter().any(|&(i, j)| !edges.contains(&(j, i))) {
                return Err(kmconsensus::Error::InvalidGraph(format!(
                    "{}: metropolis weights need an undirected edge set",
                    g.label
                )));
            }
            let mut w = WeightedGraph::metropolis(g.label.clone(), g.m(), &undirected)?;
            w.label = format!("{}-metropolis", g.label);
            Ok(w)
        })?),
        other => Err(CliError::field(
            "sweep.weightings",
            format!("unknown weighting {other:?}; expected configured, lazy or metropolis"),
        )),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub cell: usize,
    pub kind: String,
    pub beta: f64,
    pub weighting: String,
    pub seed: u64,
    pub trials: Option<usize>,
    pub iterations: Option<usize>,
    /// Distance of the terminal state to the cell's own oracle limit.
    pub terminal_error: Option<f64>,
    /// Distance of the terminal state to the configured experiment's limit.
    pub deviation_from_reference: Option<f64>,
    pub decay_ratio: Option<f64>,
    pub final_mse: Option<f64>,
    pub fejer_violations: usize,
    pub terminal_state: Vec<f64>,
}

/// Grid over β × weighting × seed (single runs) plus one Monte Carlo cell per
/// requested trial count. Cells run on at most `jobs` threads.
pub fn cmd_sweep(config: &Path, ov: &Overrides) -> Result<Vec<SweepRow>, CliError> {
    sweep_experiment(load(config, ov)?, ov.jobs)
}

pub fn sweep_experiment(base: Experiment, jobs: Option<usize>) -> Result<Vec<SweepRow>, CliError> {
    let betas = base.sweep.betas.clone().unwrap_or_else(|| vec![base.beta]);
    let weightings = base.sweep.weightings.clone().unwrap_or_else(|| vec!["configured".into()]);
    let seeds = base.sweep.seeds.clone().unwrap_or_else(|| vec![base.process.seed]);
    let trial_counts = base.sweep.trials.clone().unwrap_or_default();

    let reference = prepare(base.clone())?;
    let x_ref = DVectorExt::from(reference.oracle()?.x_star);

    #[derive(Clone)]
    enum Cell {
        Run { beta: f64, weighting: String, seed: u64 },
        Mc { trials: usize },
    }
    let mut cells = Vec::new();
    for &beta in &betas {
        for w in &weightings {
            for &seed in &seeds {
                cells.push(Cell::Run {
                    beta,
                    weighting: w.clone(),
                    seed,
                });
            }
        }
    }
    cells.extend(trial_counts.iter().map(|&trials| Cell::Mc { trials }));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let out_dir = base.out_dir.clone();
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .enumerate()
            .map(|(k, cell)| -> Result<SweepRow, CliError> {
                let mut exp = base.clone();
                exp.out_dir = out_dir.join("cells").join(format!("cell-{k:04}"));
                let row = match cell {
                    Cell::Run { beta, weighting, seed } => {
                        exp.beta = *beta;
                        exp.process.seed = *seed;
                        exp.universe = reweight(&exp.universe, weighting)?;
                        let p = prepare(exp)?;
                        let run = run_prepared(&p)?;
                        let dev = (DVectorExt::from(run.summary.terminal_state.clone()) - &x_ref).norm();
                        SweepRow {
                            cell: k,
                            kind: "run".into(),
                            beta: *beta,
                            weighting: weighting.clone(),
                            seed: *seed,
                            trials: None,
                            iterations: Some(run.summary.iterations),
                            terminal_error: Some(run.summary.terminal_error),
                            deviation_from_reference: Some(dev),
                            decay_ratio: run.summary.fitted_decay_ratio,
                            final_mse: None,
                            fejer_violations: run.summary.fejer_violations,
                            terminal_state: run.summary.terminal_state,
                        }
                    }
                    Cell::Mc { trials } => {
                        let p = prepare(exp)?;
                        let (_, s) = montecarlo_prepared(&p, *trials)?;
                        SweepRow {
                            cell: k,
                            kind: "montecarlo".into(),
                            beta: p.exp.beta,
                            weighting: "configured".into(),
                            seed: p.exp.process.seed,
                            trials: Some(*trials),
                            iterations: Some(s.horizon),
                            terminal_error: Some(s.max_terminal_error),
                            deviation_from_reference: None,
                            decay_ratio: None,
                            final_mse: Some(s.final_mse),
                            fejer_violations: s.fejer_violations,
                            terminal_state: Vec::new(),
                        }
                    }
                };
                write_json(&out_dir.join("cells").join(format!("cell-{k:04}.json")), &row)?;
                Ok(row)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let dim = reference.tilde.m() * reference.tilde.q();
    let mut csv = header(&base.hash, &seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"), &base.name);
    csv.push_str("cell,kind,beta,weighting,seed,trials,iterations,terminal_error,deviation_from_reference,decay_ratio,final_mse,fejer_violations");
    for i in 0..dim {
        let _ = write!(csv, ",x{}", i + 1);
    }
    csv.push('\n');
    let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
    for r in &rows {
        let _ = write!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cell,
            r.kind,
            fmt17(r.beta),
            r.weighting,
            r.seed,
            r.trials.map(|t| t.to_string()).unwrap_or_default(),
            r.iterations.map(|t| t.to_string()).unwrap_or_default(),
            opt(r.terminal_error),
            opt(r.deviation_from_reference),
            opt(r.decay_ratio),
            opt(r.final_mse),
            r.fejer_violations
        );
        for i in 0..dim {
            let _ = write!(csv, ",{}", r.terminal_state.get(i).map(|&v| fmt17(v)).unwrap_or_default());
        }
        csv.push('\n');
    }
    write_atomic(&out_dir.join("sweep.csv"), csv.as_bytes())?;
    Ok(rows)
}

type DVectorExt = nalgebra::DVector<f64>;
