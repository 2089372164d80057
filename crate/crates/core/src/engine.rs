//! The random Krasnoselskii–Mann iteration
//! `x_{n+1} = ½ x_n + ½[(1 − β) W(ω_n) x_n + β(Ã x_n + b̃)]`,
//! trajectory diagnostics and Monte Carlo statistics.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::operators::OperatorBundle;
use crate::problem::{consensus_error, PartitionedSystem, StackedState};
use crate::process::GraphProcess;

/// Absolute slack on `‖x_{n+1} − c‖ ≤ ‖x_n − c‖`.
pub const FEJER_SLACK: f64 = 1e-10;
pub const DEFAULT_STOP_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 100_000;

/// One iteration; identical to `bundle.eval_q1`.
pub fn km_step(bundle: &OperatorBundle<'_>, graph: usize, x: &StackedState) -> Result<StackedState> {
    bundle.eval_q1(graph, x)
}

#[derive(Debug, Clone)]
pub struct RunConfig<'a> {
    pub system: &'a PartitionedSystem,
    pub bundle: OperatorBundle<'a>,
    pub process: &'a GraphProcess,
    pub x0: StackedState,
    pub max_iters: usize,
    /// Stop once `‖x_{n+1} − x_n‖ ≤ stop_tol`.
    pub stop_tol: f64,
    pub record_stride: usize,
    /// Process substream; Monte Carlo trial `t` uses stream `t`.
    pub trial: u64,
}

impl<'a> RunConfig<'a> {
    pub fn new(
        system: &'a PartitionedSystem,
        bundle: OperatorBundle<'a>,
        process: &'a GraphProcess,
        x0: StackedState,
    ) -> Self {
        Self {
            system,
            bundle,
            process,
            x0,
            max_iters: DEFAULT_MAX_ITERS,
            stop_tol: DEFAULT_STOP_TOL,
            record_stride: 1,
            trial: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidRun("max_iters must be at least 1".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidRun("record_stride must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidRun("stop_tol must be nonnegative".into()));
        }
        if self.x0.m() != self.bundle.m() || self.x0.q() != self.bundle.q() {
            return Err(Error::Dimension("x0 does not match the operator dimensions".into()));
        }
        if self.process.n_graphs() != self.bundle.universe().len() {
            return Err(Error::InvalidRun("process and universe disagree on graph count".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub n: usize,
    /// `e_n = ‖x_n − x*‖` when a reference was supplied.
    pub error: Option<f64>,
    pub residual: f64,
    pub consensus_error: f64,
    /// Graph applied to produce `x_n`; absent at `n = 0`.
    pub graph: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub trial: u64,
    pub entries: Vec<LogEntry>,
    /// `(n, x_n)` at every logged step.
    pub iterates: Vec<(usize, Vec<f64>)>,
    pub graph_trace: Vec<usize>,
    pub fejer_violations: usize,
    /// Largest `‖x_n‖` along the run.
    pub max_norm: f64,
    pub terminated_at: usize,
    /// Stopped on the displacement rule rather than the iteration cap.
    pub converged: bool,
    #[serde(skip)]
    pub final_state: StackedState,
}

impl RunRecord {
    /// Logged `(n, e_n)` pairs.
    pub fn errors(&self) -> Vec<(usize, f64)> {
        self.entries.iter().filter_map(|e| e.error.map(|v| (e.n, v))).collect()
    }

    pub fn terminal_error(&self) -> Option<f64> {
        self.entries.last().and_then(|e| e.error)
    }
}

/// Iterates until the displacement rule or `max_iters`. With `x_star`, also
/// logs `e_n` and counts Fejér violations against it.
pub fn run_trajectory(cfg: &RunConfig<'_>, x_star: Option<&StackedState>) -> Result<RunRecord> {
    cfg.validate()?;
    let mut cursor = cfg.process.cursor(cfg.trial);
    let mut x = cfg.x0.clone();
    let dist = |x: &StackedState| x_star.map(|c| (&x.data - &c.data).norm());

    let log = |n: usize, x: &StackedState, graph: Option<usize>| -> Result<LogEntry> {
        Ok(LogEntry {
            n,
            error: dist(x),
            residual: cfg.system.residual(x)?,
            consensus_error: consensus_error(x),
            graph,
        })
    };

    let mut entries = vec![log(0, &x, None)?];
    let mut iterates = vec![(0, x.data.iter().copied().collect())];
    let mut graph_trace = Vec::new();
    let mut fejer_violations = 0;
    let mut max_norm = x.data.norm();
    let mut prev_dist = dist(&x);
    let mut converged = false;
    let mut n = 0;

    while n < cfg.max_iters {
        let g = cfg.process.next_graph(&mut cursor);
        let next = km_step(&cfg.bundle, g, &x)?;
        n += 1;
        if !next.is_finite() {
            return Err(Error::NumericalDivergence(n));
        }
        graph_trace.push(g);
        let displacement = (&next.data - &x.data).norm();
        x = next;
        max_norm = max_norm.max(x.data.norm());

        let d = dist(&x);
        if let (Some(prev), Some(cur)) = (prev_dist, d) {
            if cur > prev + FEJER_SLACK {
                fejer_violations += 1;
            }
        }
        prev_dist = d;

        converged = displacement <= cfg.stop_tol;
        let last = converged || n == cfg.max_iters;
        if n % cfg.record_stride == 0 || last {
            entries.push(log(n, &x, Some(g))?);
            iterates.push((n, x.data.iter().copied().collect()));
        }
        if converged {
            break;
        }
    }

    Ok(RunRecord {
        seed: cfg.process.spec().seed,
        trial: cfg.trial,
        entries,
        iterates,
        graph_trace,
        fejer_violations,
        max_norm,
        terminated_at: n,
        converged,
        final_state: x,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloResult {
    pub trials: usize,
    /// `(n, mean over trials of ‖x_n − x*‖²)` on the grid `0, s, 2s, …, max_iters`.
    pub mse: Vec<(usize, f64)>,
    pub terminal_errors: Vec<f64>,
    pub fejer_violations: usize,
}

impl MonteCarloResult {
    pub fn mse_at(&self, n: usize) -> Option<f64> {
        self.mse.iter().find(|(k, _)| *k == n).map(|&(_, v)| v)
    }
}

/// Runs `trials` independent trajectories (trial `t` on process stream `t`)
/// and averages squared errors per logged step. Trials that stop early hold
/// their terminal error for the rest of the grid. Reduction runs in trial
/// order, so the result depends only on the seed.
pub fn monte_carlo(cfg: &RunConfig<'_>, trials: usize, x_star: &StackedState) -> Result<MonteCarloResult> {
    if trials == 0 {
        return Err(Error::InvalidRun("trials must be at least 1".into()));
    }
    cfg.validate()?;
    let stride = cfg.record_stride;
    let grid: Vec<usize> = (0..=cfg.max_iters)
        .step_by(stride)
        .chain((cfg.max_iters % stride != 0).then_some(cfg.max_iters))
        .collect();

    let runs: Vec<RunRecord> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut c = cfg.clone();
            c.trial = t;
            run_trajectory(&c, Some(x_star))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sums = vec![0.0; grid.len()];
    let mut terminal_errors = Vec::with_capacity(trials);
    let mut fejer_violations = 0;
    for rec in &runs {
        let errs = rec.errors();
        let mut it = errs.iter().peekable();
        let mut current = errs[0].1;
        for (slot, &n) in sums.iter_mut().zip(&grid) {
            while let Some(&&(k, e)) = it.peek() {
                if k > n {
                    break;
                }
                current = e;
                it.next();
            }
            *slot += current * current;
        }
        terminal_errors.push(rec.terminal_error().unwrap_or(f64::NAN));
        fejer_violations += rec.fejer_violations;
    }
    let mse = grid
        .into_iter()
        .zip(sums)
        .map(|(n, s)| (n, s / trials as f64))
        .collect();
    Ok(MonteCarloResult {
        trials,
        mse,
        terminal_errors,
        fejer_violations,
    })
}

/// True when the last `fraction` of `curve` never rises by more than a
/// relative `slack` between consecutive points.
pub fn tail_nonincreasing(curve: &[(usize, f64)], fraction: f64, slack: f64) -> bool {
    let start = ((1.0 - fraction) * curve.len() as f64).floor() as usize;
    curve[start.min(curve.len())..]
        .windows(2)
        .all(|w| w[1].1 <= w[0].1 * (1.0 + slack))
}

/// Least-squares slope of `ln e_n` against `n`, returned as the geometric
/// ratio `exp(slope)`.
pub fn fit_geometric_ratio(points: &[(usize, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::WindowBeyondConvergence("need at least two logged errors".into()));
    }
    if let Some(&(n, e)) = points.iter().find(|(_, e)| !(*e > 0.0)) {
        return Err(Error::WindowBeyondConvergence(format!("e_{n} = {e} is not positive")));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|&(n, _)| n as f64).sum::<f64>() / k;
    let my = points.iter().map(|&(_, e)| e.ln()).sum::<f64>() / k;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(n, e) in points {
        let dx = n as f64 - mx;
        sxy += dx * (e.ln() - my);
        sxx += dx * dx;
    }
    Ok((sxy / sxx).exp())
}

/// Fitted per-iteration ratio of `e_n` over logged steps in `[start, end]`.
pub fn estimate_decay_rate(record: &RunRecord, start: usize, end: usize) -> Result<f64> {
    let pts: Vec<(usize, f64)> = record
        .errors()
        .into_iter()
        .filter(|&(n, _)| n >= start && n <= end)
        .collect();
    fit_geometric_ratio(&pts)
}
