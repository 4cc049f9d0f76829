//! Experiment runner behind the `dlqr` binary.
//!
//! A run is described by an [`ExperimentConfig`] (JSON) or by flags. Every
//! subcommand writes its artifacts to an output directory: `tables.json` for
//! `design`, `states.csv` / `inputs.csv` / `summary.json` for `simulate`,
//! `compare.csv` for `compare` and `sweep.csv` for `sweep`.
//!
//! Agents and state components are numbered from 0 in all inputs and outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    centralized_design_and_run, consensus_design_and_run, decentralized_design_and_run,
};
use crate::controller::{
    run_closed_loop, run_receding_horizon, ControllerError, RunOptions, Trajectory,
};
use crate::graph::{DirectedGraph, FusionWeights, GraphError, WeightMatrix};
use crate::init_consensus::{self, ConsensusEstimates, InitError, ObservationModel};
use crate::linalg::{lambda_max, lambda_min, spectral_radius};
use crate::metrics::{performance_bound, surrogate_cost, uniform_shares, CostReport, MetricsError};
use crate::model::{ModelError, SystemSchedule};
use crate::presets::{self, Preset, RandomSpec};
use crate::recursion::{
    boundedness_report, design_backward, lower_bound_rho, RecursionError, RecursionTables,
};
use crate::weights_opt::{optimize_weights, WeightSchedule, WeightsError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const DEFAULT_OUT: &str = "dlqr-out";
pub const DEFAULT_ACCC_ROUNDS: usize = 12;

const NOT_CONNECTED: &str = "Assumption 1 violated: communication graph is not strongly connected";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<ControllerError> for CliError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::Recursion(RecursionError::NotStronglyConnected) => {
                config(NOT_CONNECTED)
            }
            other => runtime(other),
        }
    }
}

impl From<RecursionError> for CliError {
    fn from(e: RecursionError) -> Self {
        ControllerError::from(e).into()
    }
}

impl From<WeightsError> for CliError {
    fn from(e: WeightsError) -> Self {
        match e {
            WeightsError::Recursion(r) => r.into(),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        runtime(e)
    }
}

// ---------------------------------------------------------------------------
// Config schema

/// JSON description of one experiment.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: Option<SystemSpec>,
    pub graph: Option<GraphSpec>,
    #[serde(default)]
    pub weights: WeightMode,
    #[serde(default)]
    pub controller: ControllerSpec,
    pub x0: Option<InitialStateSpec>,
    /// Overrides the system's horizon.
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum SystemSpec {
    /// `"part1"` or `"part2"`.
    Preset(String),
    Matrices(MatrixSpec),
    /// Random time-invariant instance; the seed falls back to the top-level one.
    Random(RandomSystemSpec),
}

/// Row-major time-invariant matrices.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub a: Vec<Vec<f64>>,
    /// One `n × m_i` matrix per agent.
    pub b: Vec<Vec<Vec<f64>>>,
    pub q: Vec<Vec<f64>>,
    /// One `m_i × m_i` matrix per agent.
    pub r: Vec<Vec<Vec<f64>>>,
    pub x0: Option<Vec<f64>>,
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RandomSystemSpec {
    pub seed: Option<u64>,
    pub max_state: Option<usize>,
    pub max_agents: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum GraphSpec {
    /// Agent `i` receives from `i + 1 (mod N)`.
    Ring,
    /// Agent `i` receives from `i ± 1 (mod N)`.
    BidirectionalRing,
    Complete,
    Edges {
        nodes: usize,
        /// `(i, j)`: `i` receives from `j`.
        edges: Vec<(usize, usize)>,
    },
    Adjacency(Vec<Vec<u8>>),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `ω_ij = 1/d_j^out`.
    #[default]
    Default,
    Optimized,
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ControllerSpec {
    #[default]
    Fdcc,
    Occc,
    Dcc,
    Accc {
        rounds: usize,
    },
    Receding {
        window: usize,
        /// Joint-controllability window `L`; computed when absent.
        controllability_window: Option<usize>,
    },
}

impl ControllerSpec {
    pub fn name(&self) -> String {
        match self {
            ControllerSpec::Fdcc => "fdcc".into(),
            ControllerSpec::Occc => "occc".into(),
            ControllerSpec::Dcc => "dcc".into(),
            ControllerSpec::Accc { rounds } => format!("accc[{rounds}]"),
            ControllerSpec::Receding { window, .. } => format!("receding[{window}]"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum InitialStateSpec {
    Literal(Vec<f64>),
    /// Listed agents know `x_0`; the others learn it by consensus.
    Holders {
        agents: Vec<usize>,
        value: Option<Vec<f64>>,
    },
    /// Agent `i` measures `H_i x_0` (row-major `H_i`).
    Partial {
        observations: Vec<Vec<Vec<f64>>>,
        value: Option<Vec<f64>>,
    },
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config(format!("invalid config JSON: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

// ---------------------------------------------------------------------------
// Resolution

/// Initial-state consensus outcome reported alongside a run.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct InitSummary {
    pub mode: String,
    pub iterations: usize,
    pub max_relative_error: f64,
}

/// Weights in the form the design phase needs.
#[derive(Debug, Clone)]
pub enum ResolvedWeights {
    Default(WeightMatrix<f64>),
    Explicit(WeightMatrix<f64>),
    Optimized,
}

/// A config with every reference resolved to concrete objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub schedule: SystemSchedule<f64>,
    pub graph: DirectedGraph,
    pub weights: ResolvedWeights,
    pub controller: ControllerSpec,
    pub x0: DVector<f64>,
    pub init: Option<InitSummary>,
    /// `(H_i, …)` or holder list for the consensus phase.
    pub observation: Option<ObservationModel<f64>>,
}

fn matrix(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>, CliError> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(config(format!(
            "{field}: expected a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn model_error(field: &str, e: ModelError) -> CliError {
    config(format!("{field}: {e}"))
}

fn graph_error(e: GraphError) -> CliError {
    config(format!("graph: {e}"))
}

fn resolve_system(cfg: &ExperimentConfig) -> Result<Preset<f64>, CliError> {
    let spec = cfg
        .system
        .as_ref()
        .ok_or_else(|| config("system: missing"))?;
    let preset = match spec {
        SystemSpec::Preset(name) => presets::by_name(name)
            .ok_or_else(|| config(format!("system.preset: unknown preset {name:?}")))?,
        SystemSpec::Random(r) => {
            let seed = r.seed.or(cfg.seed).unwrap_or(0);
            let mut spec = RandomSpec::default();
            if let Some(v) = r.max_state {
                spec.max_state = v.max(1);
            }
            if let Some(v) = r.max_agents {
                spec.max_agents = v.max(1);
            }
            presets::random_instance(&mut ChaCha8Rng::seed_from_u64(seed), &spec)
        }
        SystemSpec::Matrices(m) => {
            let a = matrix(&m.a, "system.matrices.a")?;
            let q = matrix(&m.q, "system.matrices.q")?;
            let b =
                m.b.iter()
                    .enumerate()
                    .map(|(i, rows)| matrix(rows, &format!("system.matrices.b[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
            let r =
                m.r.iter()
                    .enumerate()
                    .map(|(i, rows)| matrix(rows, &format!("system.matrices.r[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?;
            let agents = b.len();
            let n = a.nrows();
            let horizon = m.horizon.or(cfg.horizon).unwrap_or(presets::PRESET_HORIZON);
            let schedule = SystemSchedule::time_invariant(a, b, q, r, Some(horizon))
                .map_err(|e| model_error("system.matrices", e))?;
            let x0 = match &m.x0 {
                Some(v) => DVector::from_column_slice(v),
                None => DVector::from_element(n, 1.0),
            };
            Preset {
                name: "matrices",
                schedule,
                graph: DirectedGraph::ring(agents).map_err(graph_error)?,
                x0,
            }
        }
    };
    Ok(preset)
}

fn resolve_graph(spec: &GraphSpec, agents: usize) -> Result<DirectedGraph, CliError> {
    match spec {
        GraphSpec::Ring => DirectedGraph::ring(agents),
        GraphSpec::BidirectionalRing => DirectedGraph::bidirectional_ring(agents),
        GraphSpec::Complete => DirectedGraph::complete(agents),
        GraphSpec::Edges { nodes, edges } => DirectedGraph::new(*nodes, edges.iter().copied()),
        GraphSpec::Adjacency(rows) => DirectedGraph::from_adjacency(rows),
    }
    .map_err(graph_error)
}

fn init_error(e: InitError) -> CliError {
    match e {
        InitError::NotStronglyConnected => config(NOT_CONNECTED),
        InitError::NonConvergence { .. } => runtime(e),
        other => config(format!("x0: {other}")),
    }
}

fn check_state(v: &[f64], n: usize, field: &str) -> Result<DVector<f64>, CliError> {
    if v.len() != n {
        return Err(config(format!(
            "{field}: expected {n} entries, found {}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

fn summarize_init(mode: &str, est: &ConsensusEstimates<f64>, x0: &DVector<f64>) -> InitSummary {
    let scale = x0.norm();
    let err = est.max_error(x0);
    InitSummary {
        mode: mode.into(),
        iterations: est.iterations,
        max_relative_error: if scale > 0.0 { err / scale } else { err },
    }
}

/// Resolves presets, matrices, graph and initial state, validating as it goes.
pub fn resolve(cfg: &ExperimentConfig) -> Result<Experiment, CliError> {
    let preset = resolve_system(cfg)?;
    let mut schedule = preset.schedule;
    if let (Some(h), false) = (
        cfg.horizon,
        matches!(cfg.system, Some(SystemSpec::Matrices(_))),
    ) {
        if h == 0 {
            return Err(config("horizon: must be positive"));
        }
        schedule = schedule
            .with_horizon(Some(h))
            .map_err(|e| model_error("horizon", e))?;
    }
    schedule.validate().map_err(|e| model_error("system", e))?;
    let agents = schedule.n_agents();
    let n = schedule.state_dim();

    let graph = match &cfg.graph {
        Some(spec) => resolve_graph(spec, agents)?,
        None => preset.graph,
    };
    if graph.n_nodes() != agents {
        return Err(config(format!(
            "graph: has {} nodes but the system has {agents} agents",
            graph.n_nodes()
        )));
    }
    if !graph.is_strongly_connected() {
        return Err(config(NOT_CONNECTED));
    }

    let weights = match &cfg.weights {
        WeightMode::Default => ResolvedWeights::Default(WeightMatrix::default_for(&graph)),
        WeightMode::Optimized => ResolvedWeights::Optimized,
        WeightMode::Explicit(rows) => {
            let m = matrix(rows, "weights.explicit")?;
            ResolvedWeights::Explicit(
                WeightMatrix::from_matrix(&graph, m)
                    .map_err(|e| config(format!("weights: {e}")))?,
            )
        }
    };

    match &cfg.controller {
        ControllerSpec::Accc { rounds: 0 } => {
            return Err(config("controller.accc.rounds: must be positive"))
        }
        ControllerSpec::Receding { window: 0, .. } => {
            return Err(config("controller.receding.window: must be positive"))
        }
        _ => {}
    }

    let tol = init_consensus::DEFAULT_TOL;
    let cap = init_consensus::default_max_iters(agents);
    let (x0, init, observation) = match &cfg.x0 {
        None => (check_state(preset.x0.as_slice(), n, "x0")?, None, None),
        Some(InitialStateSpec::Literal(v)) => (check_state(v, n, "x0.literal")?, None, None),
        Some(InitialStateSpec::Holders {
            agents: holders,
            value,
        }) => {
            let x0 = match value {
                Some(v) => check_state(v, n, "x0.holders.value")?,
                None => preset.x0.clone(),
            };
            let est = init_consensus::broadcast_init(&graph, holders, &x0, tol, cap)
                .map_err(init_error)?;
            let summary = summarize_init("holders", &est, &x0);
            (
                x0,
                Some(summary),
                Some(ObservationModel::Holders(holders.clone())),
            )
        }
        Some(InitialStateSpec::Partial {
            observations,
            value,
        }) => {
            let x0 = match value {
                Some(v) => check_state(v, n, "x0.partial.value")?,
                None => preset.x0.clone(),
            };
            let h = observations
                .iter()
                .enumerate()
                .map(|(i, rows)| matrix(rows, &format!("x0.partial.observations[{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            let est =
                init_consensus::partial_obs_init(&graph, &h, &x0, tol, cap).map_err(init_error)?;
            let summary = summarize_init("partial", &est, &x0);
            (x0, Some(summary), Some(ObservationModel::Partial(h)))
        }
    };

    Ok(Experiment {
        name: preset.name.to_string(),
        schedule,
        graph,
        weights,
        controller: cfg.controller.clone(),
        x0,
        init,
        observation,
    })
}

// ---------------------------------------------------------------------------
// Runs

struct Designed {
    tables: RecursionTables<f64>,
    schedule: Option<WeightSchedule<f64>>,
    stagnated: Option<bool>,
}

fn design(exp: &Experiment) -> Result<Designed, CliError> {
    match &exp.weights {
        ResolvedWeights::Default(w) | ResolvedWeights::Explicit(w) => Ok(Designed {
            tables: design_backward(&exp.schedule, &exp.graph, w)?,
            schedule: None,
            stagnated: None,
        }),
        ResolvedWeights::Optimized => {
            let d = optimize_weights(&exp.schedule, &exp.graph, crate::weights_opt::DEFAULT_TOL)?;
            Ok(Designed {
                tables: d.tables,
                schedule: Some(d.schedule),
                stagnated: Some(d.stagnated),
            })
        }
    }
}

/// Output of one controller on the experiment.
#[derive(Debug, Clone)]
pub struct ControllerOutcome {
    /// Absent when the controller broke down before running.
    pub trajectory: Option<Trajectory<f64>>,
    pub report: CostReport,
    pub max_virtual_residual: Option<f64>,
}

fn failed_report(name: &str, agents: usize) -> CostReport {
    CostReport {
        controller: name.into(),
        cost: f64::NAN,
        surrogate: None,
        bound: None,
        per_agent: vec![f64::NAN; agents],
        messages_per_step: 0.0,
        total_messages: 0,
        final_state_inf_norm: f64::NAN,
        diverged: true,
    }
}

fn receding_l(exp: &Experiment, given: Option<usize>) -> usize {
    given.unwrap_or_else(|| {
        let n = exp.schedule.state_dim();
        exp.schedule.controllability_window(0, 1e-8, n).unwrap_or(n)
    })
}

/// Runs `spec` on the experiment.
pub fn run_controller(
    exp: &Experiment,
    spec: &ControllerSpec,
) -> Result<ControllerOutcome, CliError> {
    let s = &exp.schedule;
    let name = spec.name();
    match spec {
        ControllerSpec::Fdcc => {
            let d = design(exp)?;
            let run = run_closed_loop(
                s,
                &exp.graph,
                &d.tables,
                &exp.x0,
                RunOptions { keep_virtual: true },
            )?;
            let mut report = CostReport::new(&name, &run.trajectory, s)?;
            let history = run.virtual_history.as_deref().unwrap_or_default();
            report.surrogate = Some(surrogate_cost(history, &run.trajectory, s)?);
            report.bound = Some(performance_bound(&d.tables, &exp.x0));
            Ok(ControllerOutcome {
                trajectory: Some(run.trajectory),
                report,
                max_virtual_residual: Some(run.max_virtual_residual),
            })
        }
        ControllerSpec::Receding {
            window,
            controllability_window,
        } => {
            let l = receding_l(exp, *controllability_window);
            let run = match &exp.weights {
                ResolvedWeights::Default(w) | ResolvedWeights::Explicit(w) => {
                    run_receding_horizon(s, &exp.graph, w, &exp.x0, *window, l)?
                }
                ResolvedWeights::Optimized => {
                    let d = design(exp)?;
                    let w: &dyn FusionWeights<f64> =
                        d.schedule.as_ref().expect("optimized schedule");
                    run_receding_horizon(s, &exp.graph, w, &exp.x0, *window, l)?
                }
            };
            let report = CostReport::new(&name, &run.trajectory, s)?;
            Ok(ControllerOutcome {
                trajectory: Some(run.trajectory),
                report,
                max_virtual_residual: Some(run.max_virtual_residual),
            })
        }
        ControllerSpec::Occc => {
            let (traj, _) = centralized_design_and_run(s, &exp.x0).map_err(runtime)?;
            let report = CostReport::new(&name, &traj, s)?;
            Ok(ControllerOutcome {
                trajectory: Some(traj),
                report,
                max_virtual_residual: None,
            })
        }
        ControllerSpec::Dcc => {
            let run = decentralized_design_and_run(s, &uniform_shares(s.n_agents()), &exp.x0)
                .map_err(runtime)?;
            let diverged = run.any_diverged();
            match run.trajectory {
                Some(traj) => {
                    let mut report = CostReport::new(&name, &traj, s)?;
                    report.diverged |= diverged;
                    Ok(ControllerOutcome {
                        trajectory: Some(traj),
                        report,
                        max_virtual_residual: None,
                    })
                }
                None => Ok(ControllerOutcome {
                    trajectory: None,
                    report: failed_report(&name, s.n_agents()),
                    max_virtual_residual: None,
                }),
            }
        }
        ControllerSpec::Accc { rounds } => {
            let run = consensus_design_and_run(s, &exp.graph, *rounds, &exp.x0).map_err(runtime)?;
            let report = CostReport::new(&name, &run.trajectory, s)?;
            Ok(ControllerOutcome {
                trajectory: Some(run.trajectory),
                report,
                max_virtual_residual: None,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommands

/// Contents of `tables.json`.
#[derive(Debug, Clone, Serialize)]
pub struct DesignSummary {
    pub system: String,
    pub agents: usize,
    pub state_dim: usize,
    pub horizon: usize,
    pub weights: String,
    pub messages_per_step: usize,
    pub bound: f64,
    pub uniformly_bounded: bool,
    pub boundedness: crate::recursion::BoundednessReport,
    pub constants: crate::model::ScheduleReport,
    pub optimizer_stagnated: Option<bool>,
    /// `P̆_{0,i}`, row-major.
    pub p_breve_0: Vec<Vec<Vec<f64>>>,
    /// `λ_min(P_{k,i})` for `k = 1..=M`.
    pub lambda_min_p: Vec<Vec<f64>>,
    /// `λ_max(P̆_{k,i})` for `k = 0..=M`.
    pub lambda_max_p_breve: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn weights_label(w: &ResolvedWeights) -> &'static str {
    match w {
        ResolvedWeights::Default(_) => "default",
        ResolvedWeights::Explicit(_) => "explicit",
        ResolvedWeights::Optimized => "optimized",
    }
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    fs::write(path, text + "\n")
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn prepare_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| runtime(format!("cannot create {}: {e}", out.display())))
}

/// Design phase only; writes `tables.json`.
pub fn cmd_design(exp: &Experiment, out: &Path) -> Result<DesignSummary, CliError> {
    let d = design(exp)?;
    let t = &d.tables;
    let s = &exp.schedule;
    let report = boundedness_report(t, s)?;
    let agents = s.n_agents();
    let summary = DesignSummary {
        system: exp.name.clone(),
        agents,
        state_dim: s.state_dim(),
        horizon: t.end(),
        weights: weights_label(&exp.weights).into(),
        messages_per_step: t.messages_per_step(),
        bound: performance_bound(t, &exp.x0),
        uniformly_bounded: report.uniformly_bounded,
        boundedness: report,
        constants: s.validate().map_err(runtime)?,
        optimizer_stagnated: d.stagnated,
        p_breve_0: (0..agents).map(|i| rows_of(t.p_breve(0, i))).collect(),
        lambda_min_p: (1..=t.end())
            .map(|k| (0..agents).map(|i| lambda_min(t.p(k, i))).collect())
            .collect(),
        lambda_max_p_breve: (0..=t.end())
            .map(|k| (0..agents).map(|i| lambda_max(t.p_breve(k, i))).collect())
            .collect(),
    };
    prepare_out(out)?;
    write_json(&out.join("tables.json"), &summary)?;
    Ok(summary)
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub system: String,
    pub report: CostReport,
    pub init: Option<InitSummary>,
    pub max_virtual_residual: Option<f64>,
}

/// Runs the configured controller; writes `states.csv`, `inputs.csv` and `summary.json`.
pub fn cmd_simulate(exp: &Experiment, out: &Path) -> Result<SimulationSummary, CliError> {
    let outcome = run_controller(exp, &exp.controller)?;
    let traj = outcome.trajectory.as_ref().ok_or_else(|| {
        runtime(format!(
            "{} broke down during design",
            exp.controller.name()
        ))
    })?;
    prepare_out(out)?;
    write_trajectory(out, traj)?;
    let summary = SimulationSummary {
        system: exp.name.clone(),
        report: outcome.report,
        init: exp.init.clone(),
        max_virtual_residual: outcome.max_virtual_residual,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One row of `compare.csv`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompareRow {
    pub controller: String,
    pub cost: f64,
    pub bound: Option<f64>,
    pub messages_per_step: f64,
    pub wall_time_s: f64,
    pub diverged: bool,
}

/// FDCC, OCCC, DCC and ACCC(`rounds`) on the same instance; writes `compare.csv`.
pub fn cmd_compare(
    exp: &Experiment,
    rounds: usize,
    out: &Path,
) -> Result<Vec<CompareRow>, CliError> {
    let specs = [
        ControllerSpec::Fdcc,
        ControllerSpec::Occc,
        ControllerSpec::Dcc,
        ControllerSpec::Accc { rounds },
    ];
    let mut rows = Vec::with_capacity(specs.len());
    for spec in &specs {
        let start = Instant::now();
        let outcome = run_controller(exp, spec)?;
        let wall = start.elapsed().as_secs_f64();
        rows.push(CompareRow {
            controller: outcome.report.controller.clone(),
            cost: outcome.report.cost,
            bound: outcome.report.bound,
            messages_per_step: outcome.report.messages_per_step,
            wall_time_s: wall,
            diverged: outcome.report.diverged,
        });
    }
    prepare_out(out)?;
    let path = out.join("compare.csv");
    let mut w = csv::Writer::from_path(&path).map_err(runtime)?;
    w.write_record([
        "controller",
        "cost",
        "bound",
        "messages_per_step",
        "wall_time_s",
        "diverged",
    ])
    .map_err(runtime)?;
    for r in &rows {
        w.write_record([
            r.controller.clone(),
            fmt_f64(r.cost),
            r.bound.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.messages_per_step),
            fmt_f64(r.wall_time_s),
            r.diverged.to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(rows)
}

/// Reads `compare.csv` back.
pub fn read_compare_csv(path: &Path) -> Result<Vec<CompareRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(runtime)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(runtime)?;
        let bound = match rec.get(2) {
            Some("") | None => None,
            Some(v) => Some(parse_f64(v)?),
        };
        rows.push(CompareRow {
            controller: rec[0].to_string(),
            cost: parse_f64(&rec[1])?,
            bound,
            messages_per_step: parse_f64(&rec[3])?,
            wall_time_s: parse_f64(&rec[4])?,
            diverged: rec[5].parse().map_err(runtime)?,
        });
    }
    Ok(rows)
}

/// One random instance of the invariant suite.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub state_dim: usize,
    pub agents: usize,
    pub horizon: usize,
    pub cost: f64,
    pub surrogate: f64,
    pub bound: f64,
    pub min_lambda_p: f64,
    pub rho_lower: f64,
    pub spectral_radius_a: f64,
    pub max_virtual_residual: f64,
    pub ok: bool,
}

/// Random-instance check of `J ≤ Ĵ ≤ J^bound`, the `P` lower bound and the
/// virtual-state identity. Writes `sweep.csv`.
pub fn cmd_sweep(
    count: usize,
    seed: u64,
    spec: &RandomSpec,
    out: &Path,
) -> Result<Vec<SweepRow>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    for index in 0..count {
        let p = presets::random_instance(&mut rng, spec);
        let s = &p.schedule;
        let w = WeightMatrix::default_for(&p.graph);
        let tables = design_backward(s, &p.graph, &w)?;
        let run = run_closed_loop(
            s,
            &p.graph,
            &tables,
            &p.x0,
            RunOptions { keep_virtual: true },
        )?;
        let cost = crate::metrics::realized_cost(&run.trajectory, s)?;
        let surrogate = surrogate_cost(
            run.virtual_history.as_deref().unwrap_or_default(),
            &run.trajectory,
            s,
        )?;
        let bound = performance_bound(&tables, &p.x0);
        let rep = boundedness_report(&tables, s)?;
        let consts = s.validate().map_err(runtime)?;
        let rho = lower_bound_rho(rep.max_weight, s.n_agents(), &consts);
        let slack = 1e-8 * (1.0 + bound);
        let ok = cost <= bound + slack
            && cost <= surrogate + slack
            && surrogate <= bound + slack
            && rep.min_lambda_p >= rho - 1e-10
            && run.max_virtual_residual <= crate::controller::VIRTUAL_SUM_TOL;
        rows.push(SweepRow {
            index,
            state_dim: s.state_dim(),
            agents: s.n_agents(),
            horizon: s.horizon().unwrap_or(0),
            cost,
            surrogate,
            bound,
            min_lambda_p: rep.min_lambda_p,
            rho_lower: rho,
            spectral_radius_a: spectral_radius(s.a(0)),
            max_virtual_residual: run.max_virtual_residual,
            ok,
        });
    }
    prepare_out(out)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(runtime)?;
    w.write_record([
        "index",
        "state_dim",
        "agents",
        "horizon",
        "cost",
        "surrogate",
        "bound",
        "min_lambda_p",
        "rho_lower",
        "spectral_radius_a",
        "max_virtual_residual",
        "ok",
    ])
    .map_err(runtime)?;
    for r in &rows {
        w.write_record([
            r.index.to_string(),
            r.state_dim.to_string(),
            r.agents.to_string(),
            r.horizon.to_string(),
            fmt_f64(r.cost),
            fmt_f64(r.surrogate),
            fmt_f64(r.bound),
            fmt_f64(r.min_lambda_p),
            fmt_f64(r.rho_lower),
            fmt_f64(r.spectral_radius_a),
            fmt_f64(r.max_virtual_residual),
            r.ok.to_string(),
        ])
        .map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;
    Ok(rows)
}

// ---------------------------------------------------------------------------
// CSV trajectories

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|e| runtime(format!("bad number {s:?}: {e}")))
}

/// `states.csv`: `k, state_0 … state_{n−1}, messages` (messages sent during
/// step `k`, empty on the final row). `inputs.csv`: `k, agent, component, value`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory<f64>) -> Result<(), CliError> {
    let n = traj.states[0].len();
    let mut w = csv::Writer::from_path(dir.join("states.csv")).map_err(runtime)?;
    let mut header = vec!["k".to_string()];
    header.extend((0..n).map(|c| format!("state_{c}")));
    header.push("messages".into());
    w.write_record(&header).map_err(runtime)?;
    for (k, x) in traj.states.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(x.iter().map(|&v| fmt_f64(v)));
        rec.push(
            traj.messages_per_step
                .get(k)
                .map(|m| m.to_string())
                .unwrap_or_default(),
        );
        w.write_record(&rec).map_err(runtime)?;
    }
    w.flush().map_err(runtime)?;

    let mut w = csv::Writer::from_path(dir.join("inputs.csv")).map_err(runtime)?;
    w.write_record(["k", "agent", "component", "value"])
        .map_err(runtime)?;
    for (k, step) in traj.inputs.iter().enumerate() {
        for (i, u) in step.iter().enumerate() {
            for (c, &v) in u.iter().enumerate() {
                w.write_record([k.to_string(), i.to_string(), c.to_string(), fmt_f64(v)])
                    .map_err(runtime)?;
            }
        }
    }
    w.flush().map_err(runtime)
}

fn parse_usize(s: &str) -> Result<usize, CliError> {
    s.trim()
        .parse()
        .map_err(|e| runtime(format!("bad index {s:?}: {e}")))
}

/// Reads a trajectory written by [`write_trajectory`].
pub fn read_trajectory(dir: &Path) -> Result<Trajectory<f64>, CliError> {
    let mut r = csv::Reader::from_path(dir.join("states.csv")).map_err(runtime)?;
    let mut states = Vec::new();
    let mut messages = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(runtime)?;
        let last = rec.len() - 1;
        let x: Vec<f64> = (1..last)
            .map(|c| parse_f64(&rec[c]))
            .collect::<Result<_, _>>()?;
        states.push(DVector::from_vec(x));
        if !rec[last].is_empty() {
            messages.push(parse_usize(&rec[last])?);
        }
    }
    let steps = states.len().saturating_sub(1);
    let mut inputs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); steps];
    let mut r = csv::Reader::from_path(dir.join("inputs.csv")).map_err(runtime)?;
    for rec in r.records() {
        let rec = rec.map_err(runtime)?;
        let (k, i, c) = (
            parse_usize(&rec[0])?,
            parse_usize(&rec[1])?,
            parse_usize(&rec[2])?,
        );
        let step = inputs
            .get_mut(k)
            .ok_or_else(|| runtime(format!("input step {k} outside trajectory")))?;
        if step.len() <= i {
            step.resize(i + 1, Vec::new());
        }
        if step[i].len() != c {
            return Err(runtime(format!(
                "inputs.csv out of order at k={k}, agent={i}"
            )));
        }
        step[i].push(parse_f64(&rec[3])?);
    }
    Ok(Trajectory {
        states,
        inputs: inputs
            .into_iter()
            .map(|step| step.into_iter().map(DVector::from_vec).collect())
            .collect(),
        messages_per_step: messages,
    })
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "dlqr", version, about = "Distributed LQR experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the design phase and write tables.json.
    Design(RunArgs),
    /// Run one controller and write states.csv, inputs.csv and summary.json.
    Simulate(RunArgs),
    /// Run FDCC, OCCC, DCC and ACCC on the same instance and write compare.csv.
    Compare(RunArgs),
    /// Check the cost and boundedness invariants on random instances.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerName {
    Fdcc,
    Occc,
    Dcc,
    Accc,
    Receding,
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// Built-in instance: part1 or part2.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub controller: Option<ControllerName>,
    /// Averaging rounds per step for ACCC.
    #[arg(long)]
    pub accc_rounds: Option<usize>,
    #[arg(long)]
    pub optimize_weights: bool,
    /// Re-anchoring interval for the receding-horizon controller.
    #[arg(long)]
    pub receding_window: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: $DLQR_OUT, then ./dlqr-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 6)]
    pub max_state: usize,
    #[arg(long, default_value_t = 5)]
    pub max_agents: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn out_dir(flag: Option<&PathBuf>, cfg: Option<&PathBuf>) -> PathBuf {
    flag.or(cfg)
        .cloned()
        .or_else(|| std::env::var_os("DLQR_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Merges flags into the config file (flags win).
pub fn merge_args(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = &args.preset {
        cfg.system = Some(SystemSpec::Preset(p.clone()));
    }
    if cfg.system.is_none() {
        return Err(config(
            "system: give --preset or a config with a system section",
        ));
    }
    if args.optimize_weights {
        cfg.weights = WeightMode::Optimized;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    let rounds = args.accc_rounds.or(match cfg.controller {
        ControllerSpec::Accc { rounds } => Some(rounds),
        _ => None,
    });
    let name = args
        .controller
        .or(args.receding_window.map(|_| ControllerName::Receding));
    if let Some(name) = name {
        cfg.controller = match name {
            ControllerName::Fdcc => ControllerSpec::Fdcc,
            ControllerName::Occc => ControllerSpec::Occc,
            ControllerName::Dcc => ControllerSpec::Dcc,
            ControllerName::Accc => ControllerSpec::Accc {
                rounds: rounds.unwrap_or(DEFAULT_ACCC_ROUNDS),
            },
            ControllerName::Receding => {
                let (window, l) = match (&cfg.controller, args.receding_window) {
                    (_, Some(w)) => (w, None),
                    (
                        ControllerSpec::Receding {
                            window,
                            controllability_window,
                        },
                        None,
                    ) => (*window, *controllability_window),
                    _ => return Err(config("controller.receding.window: give --receding-window")),
                };
                ControllerSpec::Receding {
                    window,
                    controllability_window: l,
                }
            }
        };
    }
    let out = out_dir(args.out.as_ref(), cfg.out.as_ref());
    Ok((cfg, out))
}

/// Executes a parsed command line and returns the text for stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    let mut text = String::new();
    match cli.command {
        Command::Design(args) => {
            let (cfg, out) = merge_args(&args)?;
            let exp = resolve(&cfg)?;
            let d = cmd_design(&exp, &out)?;
            let _ = writeln!(
                text,
                "system: {} ({} agents, n = {}, M = {})",
                d.system, d.agents, d.state_dim, d.horizon
            );
            let _ = writeln!(text, "weights: {}", d.weights);
            let _ = writeln!(
                text,
                "uniformly bounded: {}",
                if d.uniformly_bounded { "yes" } else { "no" }
            );
            let _ = writeln!(
                text,
                "min λ(P) = {:e}, lower bound ρ = {:e}",
                d.boundedness.min_lambda_p, d.boundedness.rho_lower
            );
            let _ = writeln!(text, "cost bound: {}", d.bound);
            let _ = writeln!(text, "wrote {}", out.join("tables.json").display());
        }
        Command::Simulate(args) => {
            let (cfg, out) = merge_args(&args)?;
            let exp = resolve(&cfg)?;
            let s = cmd_simulate(&exp, &out)?;
            let r = &s.report;
            let _ = writeln!(text, "controller: {}", r.controller);
            let _ = writeln!(text, "cost: {}", r.cost);
            if let Some(v) = r.surrogate {
                let _ = writeln!(text, "surrogate: {v}");
            }
            if let Some(v) = r.bound {
                let _ = writeln!(text, "bound: {v}");
            }
            let _ = writeln!(text, "messages per step: {}", r.messages_per_step);
            let _ = writeln!(text, "final |x|_inf: {}", r.final_state_inf_norm);
            if let Some(i) = &s.init {
                let _ = writeln!(
                    text,
                    "x0 consensus ({}): {} iterations, relative error {:e}",
                    i.mode, i.iterations, i.max_relative_error
                );
            }
            let _ = writeln!(text, "wrote {}", out.display());
        }
        Command::Compare(args) => {
            let (cfg, out) = merge_args(&args)?;
            let rounds = args.accc_rounds.unwrap_or(match cfg.controller {
                ControllerSpec::Accc { rounds } => rounds,
                _ => DEFAULT_ACCC_ROUNDS,
            });
            if rounds == 0 {
                return Err(config("accc-rounds: must be positive"));
            }
            let exp = resolve(&cfg)?;
            let rows = cmd_compare(&exp, rounds, &out)?;
            let _ = writeln!(
                text,
                "{:<10} {:>14} {:>14} {:>10} {:>10} diverged",
                "controller", "cost", "bound", "msgs/step", "time[s]"
            );
            for r in &rows {
                let bound = r
                    .bound
                    .map(|b| format!("{b:.6e}"))
                    .unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    text,
                    "{:<10} {:>14.6e} {:>14} {:>10} {:>10.3} {}",
                    r.controller, r.cost, bound, r.messages_per_step, r.wall_time_s, r.diverged
                );
            }
            let _ = writeln!(text, "wrote {}", out.join("compare.csv").display());
        }
        Command::Sweep(args) => {
            let spec = RandomSpec {
                max_state: args.max_state.max(1),
                max_agents: args.max_agents.max(1),
                ..RandomSpec::default()
            };
            let out = out_dir(args.out.as_ref(), None);
            let rows = cmd_sweep(args.count, args.seed, &spec, &out)?;
            let failed: Vec<usize> = rows.iter().filter(|r| !r.ok).map(|r| r.index).collect();
            let _ = writeln!(
                text,
                "{} instances, {} violations",
                rows.len(),
                failed.len()
            );
            let _ = writeln!(text, "wrote {}", out.join("sweep.csv").display());
            if !failed.is_empty() {
                return Err(runtime(format!(
                    "invariant violated on instances {failed:?}"
                )));
            }
        }
    }
    Ok(text)
}
