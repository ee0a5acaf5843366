//! Experiment configuration, dispatch and result emission for the command
//! line front end.
//!
//! A configuration is a JSON document:
//!
//! ```text
//! {
//!   "seed": 7,
//!   "graph": {"kind": "complete", "n": 2},
//!   "scenario": {"kind": "deterministic", "times": [0.0]},
//!   "utility": {"kind": "quadratic", "gamma": 1.0, "ell": 0.5, "lambda_theta": 1.0},
//!   "theta": {"kind": "constant", "value": 1.0},
//!   "admissible": {"kind": "ball", "radius": 4.0},
//!   "normalization": {"kind": "degree"},
//!   "operation": {"kind": "solve"},
//!   "output": "out/k2"
//! }
//! ```
//!
//! Graph kinds: `complete`, `cycle`, `path` (`n`), `torus` (`width`,
//! `height`), `edges` (`n`, `edges`), `edge_list_file` (`path`), and the
//! infinite `line`, `lattice2d`, `tree` (`degree`), usable by `truncate` and
//! `reconstruct` only. Scenario kinds: `deterministic` (`times`), `uniform`
//! (`atoms`, `times`, `filtration`), `exhaustive_signs` (`bits`, `times`),
//! `explicit` (`probs`, `times`, `blocks`). Utility kinds: `quadratic` and
//! `lq` (`k`, `l`, `coefficients`, `eta`). The operation block carries the
//! parameters of the selected subcommand; see [`Operation`].

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::equilibrium::{Game, SolveOptions, SolveSummary};
use crate::error::{Error, Result};
use crate::graph::{ball, complete, cycle, path, torus, FiniteGraph, Graph, LazyGraph, Normalization, SubgraphView, VertexId};
use crate::local_weak::{
    equilibrium_convergence_experiment, fixed_root_law, mtp_check, uniform_root_law, ConvergenceSpec, GraphSequence,
    LwcModel,
};
use crate::locality::{decay_profile, CovarianceMode, GameTemplate, TestFunction};
use crate::process::{ActionProcess, ActionProfile, AdmissibleSet, Filtration, NamedFiltration, ScenarioSpace};
use crate::theta::{sample_theta, stream_seed, KeyedTheta, ThetaGenerator, ThetaSource};
use crate::utility::{QuadraticUtility, Utility, UtilityConstants};
use crate::volterra::{LqCoefficients, LqStateGame, LqUtility, VolterraKernel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Complete { n: usize },
    Cycle { n: usize },
    Path { n: usize },
    Torus { width: usize, height: usize },
    Edges { n: usize, edges: Vec<(usize, usize)> },
    EdgeListFile {
        path: PathBuf,
        #[serde(default)]
        min_vertices: usize,
    },
    Line,
    Lattice2d,
    Tree { degree: usize },
}

enum BuiltGraph {
    Finite(Arc<FiniteGraph>),
    Infinite(Arc<LazyGraph>),
}

impl GraphSpec {
    fn build(&self, base: &Path) -> Result<BuiltGraph> {
        let finite = |g: FiniteGraph| Ok(BuiltGraph::Finite(Arc::new(g)));
        match self {
            GraphSpec::Complete { n } => finite(complete(*n)?),
            GraphSpec::Cycle { n } => finite(cycle(*n)?),
            GraphSpec::Path { n } => finite(path(*n)?),
            GraphSpec::Torus { width, height } => finite(torus(*width, *height)?),
            GraphSpec::Edges { n, edges } => finite(FiniteGraph::from_edges(*n, edges)?),
            GraphSpec::EdgeListFile { path, min_vertices } => {
                finite(FiniteGraph::from_edge_list_file(&base.join(path), *min_vertices)?)
            }
            GraphSpec::Line => Ok(BuiltGraph::Infinite(Arc::new(LazyGraph::Line))),
            GraphSpec::Lattice2d => Ok(BuiltGraph::Infinite(Arc::new(LazyGraph::Lattice2d))),
            GraphSpec::Tree { degree } => Ok(BuiltGraph::Infinite(Arc::new(LazyGraph::Tree { degree: *degree }))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    Deterministic {
        times: Vec<f64>,
    },
    Uniform {
        atoms: usize,
        times: Vec<f64>,
        #[serde(default = "reveal_at_start")]
        filtration: Filtration,
    },
    ExhaustiveSigns {
        bits: usize,
        times: Vec<f64>,
    },
    Explicit {
        probs: Vec<f64>,
        times: Vec<f64>,
        blocks: Vec<Vec<usize>>,
    },
}

fn reveal_at_start() -> Filtration {
    Filtration::Named(NamedFiltration::RevealAtStart)
}

impl ScenarioSpec {
    fn times(&self) -> &[f64] {
        match self {
            ScenarioSpec::Deterministic { times }
            | ScenarioSpec::Uniform { times, .. }
            | ScenarioSpec::ExhaustiveSigns { times, .. }
            | ScenarioSpec::Explicit { times, .. } => times,
        }
    }

    fn build(&self) -> Result<ScenarioSpace> {
        match self {
            ScenarioSpec::Deterministic { times } => ScenarioSpace::deterministic(times.clone()),
            ScenarioSpec::Uniform { atoms, times, filtration } => {
                ScenarioSpace::with_filtration(*atoms, times.clone(), filtration)
            }
            ScenarioSpec::ExhaustiveSigns { bits, times } => ScenarioSpace::exhaustive_signs(*bits, times.clone()),
            ScenarioSpec::Explicit { probs, times, blocks } => {
                ScenarioSpace::new(probs.clone(), times.clone(), blocks.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilitySpec {
    /// `-(gamma/2)||a||^2 + ell <a, z> + lambda_theta <a, theta>`.
    Quadratic {
        gamma: f64,
        ell: f64,
        #[serde(default = "one")]
        lambda_theta: f64,
    },
    /// Linear-quadratic state game `X = K X + L a + eta`; `eta` is sampled
    /// per vertex like a heterogeneity process.
    Lq {
        k: Vec<Vec<f64>>,
        l: Vec<Vec<f64>>,
        coefficients: LqCoefficients,
        eta: ThetaGenerator,
    },
}

fn one() -> f64 {
    1.0
}

impl UtilitySpec {
    fn lq_game(&self) -> Result<Option<LqStateGame>> {
        match self {
            UtilitySpec::Lq { k, l, coefficients, .. } => Ok(Some(LqStateGame::new(
                VolterraKernel::from_rows(k, l).map_err(|e| Error::config("utility.k", e.to_string()))?,
                *coefficients,
            ))),
            UtilitySpec::Quadratic { .. } => Ok(None),
        }
    }

    /// Contraction constant, computed without touching the graph.
    pub fn rho(&self) -> Result<f64> {
        match self {
            UtilitySpec::Quadratic { gamma, ell, lambda_theta } => UtilityConstants {
                gamma: *gamma,
                ell: *ell,
                ell_theta: lambda_theta.abs(),
            }
            .certify(),
            UtilitySpec::Lq { .. } => {
                let game = self.lq_game()?.expect("lq");
                Ok(game.utility()?.constants().rho())
            }
        }
    }
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    10_000
}
fn default_check_tol() -> f64 {
    1e-8
}
fn default_reference_extra() -> usize {
    30
}
fn default_ks() -> Vec<usize> {
    (0..=8).collect()
}
fn default_mtp_tol() -> f64 {
    1e-12
}
fn default_instances() -> usize {
    100
}
fn default_points() -> usize {
    6
}
fn default_atoms() -> usize {
    4
}
fn default_k() -> usize {
    2
}
fn default_buffer() -> usize {
    6
}
fn default_reps() -> usize {
    1000
}
fn default_limit_reps() -> usize {
    20_000
}

/// Root law for the mass-transport check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RootLaw {
    Uniform,
    Fixed { root: VertexId },
    Weights { weights: Vec<f64> },
}

/// Transport functions `F(G, o, v)` available from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// `deg(o)` to each neighbor of `o`.
    DegreeToNeighbor,
    /// Unit mass from `o` to each neighbor.
    UnitToNeighbor,
    /// `dist(o, v)` to every vertex.
    Distance,
}

/// Operation selector and its parameters; `kind` must match the subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Operation {
    Solve {
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    /// Truncated local solves against a reference equilibrium. On infinite
    /// graphs the reference is the truncated game of radius
    /// `max(ks) + reference_extra`.
    Truncate {
        #[serde(default)]
        vertices: Option<Vec<VertexId>>,
        #[serde(default = "default_ks")]
        ks: Vec<usize>,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_reference_extra")]
        reference_extra: usize,
    },
    /// Clamped reconstruction of `B_r(center)` from exact boundary actions.
    Reconstruct {
        #[serde(default)]
        center: Option<VertexId>,
        radii: Vec<usize>,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_check_tol")]
        check_tol: f64,
        #[serde(default = "default_reference_extra")]
        reference_extra: usize,
    },
    Epsnash {
        #[serde(default = "default_ks")]
        ks: Vec<usize>,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    /// Singleton covariance rows; `pairs` defaults to `(from, v)` for all `v`.
    Corrdecay {
        #[serde(default)]
        pairs: Option<Vec<(VertexId, VertexId)>>,
        #[serde(default)]
        from: Option<VertexId>,
        #[serde(default)]
        f1: Option<TestFunction>,
        #[serde(default)]
        f2: Option<TestFunction>,
        #[serde(default = "exhaustive")]
        mode: CovarianceMode,
    },
    Lwc {
        sequence: GraphSequence,
        ns: Vec<usize>,
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_buffer")]
        buffer: usize,
        #[serde(default = "default_reps")]
        replications: usize,
        #[serde(default = "default_limit_reps")]
        limit_replications: usize,
        #[serde(default)]
        model: LwcModel,
    },
    Mtp {
        transport: Transport,
        root_law: RootLaw,
        #[serde(default = "default_mtp_tol")]
        tol: f64,
    },
    /// Random explicit-vs-implicit state checks; with an `lq` utility and a
    /// finite graph also compares reduced and simulated payoffs.
    #[serde(alias = "volterra-check")]
    VolterraCheck {
        #[serde(default = "default_instances")]
        instances: usize,
        #[serde(default = "default_points")]
        points: usize,
        #[serde(default = "default_atoms")]
        atoms: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

fn exhaustive() -> CovarianceMode {
    CovarianceMode::Exhaustive
}

impl Operation {
    pub fn name(&self) -> &'static str {
        match self {
            Operation::Solve { .. } => "solve",
            Operation::Truncate { .. } => "truncate",
            Operation::Reconstruct { .. } => "reconstruct",
            Operation::Epsnash { .. } => "epsnash",
            Operation::Corrdecay { .. } => "corrdecay",
            Operation::Lwc { .. } => "lwc",
            Operation::Mtp { .. } => "mtp",
            Operation::VolterraCheck { .. } => "volterra-check",
        }
    }
}

pub const SUBCOMMANDS: [&str; 8] =
    ["solve", "truncate", "reconstruct", "epsnash", "corrdecay", "lwc", "mtp", "volterra-check"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub graph: Option<GraphSpec>,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default)]
    pub utility: Option<UtilitySpec>,
    #[serde(default)]
    pub theta: Option<ThetaGenerator>,
    #[serde(default)]
    pub admissible: Option<AdmissibleSet>,
    #[serde(default)]
    pub normalization: Normalization,
    pub operation: Operation,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses JSON, reporting the path of the offending field.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::config(".", format!("config is not UTF-8: {e}")))?;
        Ok((Self::parse(text)?, bytes))
    }

    fn require<'a, T>(field: &'a Option<T>, name: &str, op: &str) -> Result<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| Error::config(name, format!("required by {op}")))
    }

    /// Contraction constant of the configured model, or `None` for
    /// operations without a game.
    pub fn rho(&self) -> Result<Option<f64>> {
        match &self.operation {
            Operation::Lwc { model, .. } => Ok(Some(model.rho())),
            Operation::Mtp { .. } => Ok(None),
            Operation::VolterraCheck { .. } => self.utility.as_ref().map(|u| u.rho()).transpose(),
            op => Ok(Some(Self::require(&self.utility, "utility", op.name())?.rho()?)),
        }
    }

    /// Field checks that do not need any solve. Refuses `rho >= 1`.
    pub fn validate(&self) -> Result<()> {
        let op = self.operation.name();
        if let Some(rho) = self.rho()? {
            if !(rho < 1.0) {
                return Err(Error::ContractionViolation { rho });
            }
        }
        if let Some(a) = &self.admissible {
            a.validate().map_err(|e| Error::config("admissible", e.to_string()))?;
        }
        let needs_game = !matches!(
            self.operation,
            Operation::Lwc { .. } | Operation::Mtp { .. } | Operation::VolterraCheck { .. }
        );
        if needs_game {
            Self::require(&self.graph, "graph", op)?;
            Self::require(&self.admissible, "admissible", op)?;
            let is_lq = matches!(self.utility, Some(UtilitySpec::Lq { .. }));
            if !is_lq {
                Self::require(&self.theta, "theta", op)?;
            }
            if !matches!(self.operation, Operation::Corrdecay { .. }) {
                Self::require(&self.scenario, "scenario", op)?;
            }
            if is_lq && matches!(self.operation, Operation::Corrdecay { .. }) {
                return Err(Error::config("utility", "corrdecay supports the quadratic utility only"));
            }
        }
        if matches!(self.operation, Operation::Mtp { .. }) {
            Self::require(&self.graph, "graph", op)?;
        }
        match &self.operation {
            Operation::Solve { tol, .. }
            | Operation::Truncate { tol, .. }
            | Operation::Reconstruct { tol, .. }
            | Operation::Epsnash { tol, .. }
            | Operation::VolterraCheck { tol, .. }
                if !(*tol > 0.0) =>
            {
                Err(Error::config("operation.tol", "tolerance must be positive"))
            }
            Operation::Lwc { ns, .. } if ns.is_empty() => Err(Error::config("operation.ns", "need at least one size")),
            Operation::VolterraCheck { points, .. } if *points == 0 => {
                Err(Error::config("operation.points", "need at least one time point"))
            }
            _ => Ok(()),
        }
    }
}

/// One CSV file: header and already formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    /// RFC-4180 bytes with `\n` line endings.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// A point of a long-format plot series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub bound: f64,
}

/// Long-format `series,x,y,bound` table.
pub fn emit_plot_data(points: &[PlotPoint]) -> Table {
    let mut t = Table::new("plot.csv", &["series", "x", "y", "bound"]);
    for p in points {
        t.push([p.series.clone(), num(p.x), num(p.y), num(p.bound)]);
    }
    t
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Everything an operation produces before it is written to disk.
#[derive(Debug, Clone)]
pub struct OperationOutput {
    pub tables: Vec<Table>,
    pub plot: Vec<PlotPoint>,
    pub summary: Value,
    /// `false` when a bound check failed.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub operation: String,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Value,
    pub wall_time_secs: f64,
    pub rho: Option<f64>,
    pub pass: bool,
    pub outputs: Vec<OutputFile>,
    pub summary: Value,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    /// 0 on success, 2 when a bound check failed.
    pub fn exit_code(&self) -> i32 {
        if self.manifest.pass {
            0
        } else {
            2
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loads, validates, executes and writes one experiment.
pub fn run(subcommand: &str, config_path: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<RunOutcome> {
    let started = Instant::now();
    let (mut cfg, bytes) = ExperimentConfig::load(config_path)?;
    if !SUBCOMMANDS.contains(&subcommand) {
        return Err(Error::config("operation.kind", format!("unknown subcommand {subcommand}")));
    }
    if cfg.operation.name() != subcommand {
        return Err(Error::config(
            "operation.kind",
            format!("config describes `{}`, subcommand is `{subcommand}`", cfg.operation.name()),
        ));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out_dir = match (out, &cfg.output) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => base.join(o),
        (None, None) => PathBuf::from("out"),
    };
    let result = execute(&cfg, base)?;
    std::fs::create_dir_all(&out_dir)?;
    let mut outputs = Vec::new();
    let mut tables = result.tables;
    if !result.plot.is_empty() {
        tables.push(emit_plot_data(&result.plot));
    }
    for t in &tables {
        let data = t.to_bytes()?;
        std::fs::write(out_dir.join(&t.name), &data)?;
        outputs.push(OutputFile {
            file: t.name.clone(),
            sha256: sha256_hex(&data),
        });
    }
    let manifest = RunManifest {
        operation: subcommand.to_string(),
        config_hash: sha256_hex(&bytes),
        seed: cfg.seed,
        versions: json!({ "sparse-nash": env!("CARGO_PKG_VERSION") }),
        wall_time_secs: started.elapsed().as_secs_f64(),
        rho: cfg.rho()?,
        pass: result.pass,
        outputs,
        summary: result.summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(out_dir.join("manifest.json"), text + "\n")?;
    Ok(RunOutcome { manifest, out_dir })
}

/// Runs the configured operation without touching the file system, except
/// for inputs referenced by the config (resolved against `base`).
pub fn execute(cfg: &ExperimentConfig, base: &Path) -> Result<OperationOutput> {
    cfg.validate()?;
    match &cfg.operation {
        Operation::Lwc { .. } => run_lwc(cfg),
        Operation::Mtp { .. } => run_mtp(cfg, base),
        Operation::VolterraCheck { .. } => run_volterra(cfg, base),
        Operation::Corrdecay { .. } => run_corrdecay(cfg, base),
        _ => {
            let graph = cfg.graph.as_ref().expect("validated").build(base)?;
            match graph {
                BuiltGraph::Finite(g) => {
                    let game = finite_game(cfg, g)?;
                    match &cfg.operation {
                        Operation::Solve { tol, max_iter } => run_solve(&game, *tol, *max_iter),
                        Operation::Truncate { .. } => run_truncate_finite(cfg, &game),
                        Operation::Reconstruct { .. } => run_reconstruct_finite(cfg, &game),
                        Operation::Epsnash { ks, tol } => run_epsnash(&game, ks, *tol),
                        _ => unreachable!(),
                    }
                }
                BuiltGraph::Infinite(g) => {
                    let game = infinite_game(cfg, g)?;
                    match &cfg.operation {
                        Operation::Truncate { .. } => run_truncate_infinite(cfg, &game),
                        Operation::Reconstruct { .. } => run_reconstruct_infinite(cfg, &game),
                        op => Err(Error::config("graph", format!("{} needs a finite graph", op.name()))),
                    }
                }
            }
        }
    }
}

fn space_of(cfg: &ExperimentConfig) -> Result<Arc<ScenarioSpace>> {
    let spec = cfg.scenario.as_ref().ok_or_else(|| Error::config("scenario", "missing"))?;
    Ok(Arc::new(spec.build().map_err(|e| Error::config("scenario", e.to_string()))?))
}

fn finite_game(cfg: &ExperimentConfig, g: Arc<FiniteGraph>) -> Result<Game<FiniteGraph>> {
    let space = space_of(cfg)?;
    let admissible = *cfg.admissible.as_ref().expect("validated");
    let utility = cfg.utility.as_ref().expect("validated");
    let (utility, theta): (Arc<dyn Utility>, Arc<dyn ThetaSource>) = match utility {
        UtilitySpec::Quadratic { gamma, ell, lambda_theta } => (
            Arc::new(QuadraticUtility::new(*gamma, *ell, *lambda_theta)?),
            Arc::new(KeyedTheta::new(&space, cfg.theta.clone().expect("validated"), cfg.seed)?),
        ),
        UtilitySpec::Lq { eta, .. } => {
            let lq = utility.lq_game()?.expect("lq");
            let eta = sample_theta(&space, g.ids().iter().copied(), eta, cfg.seed)?;
            let red = lq.reduce(&g, &eta, &cfg.normalization)?;
            (red.utility, Arc::new(red.theta))
        }
    };
    Game::new(g, space, theta, utility, admissible, cfg.normalization)
}

fn infinite_game(cfg: &ExperimentConfig, g: Arc<LazyGraph>) -> Result<Game<LazyGraph>> {
    let space = space_of(cfg)?;
    let admissible = *cfg.admissible.as_ref().expect("validated");
    match cfg.utility.as_ref().expect("validated") {
        UtilitySpec::Quadratic { gamma, ell, lambda_theta } => Game::new(
            g,
            space.clone(),
            Arc::new(KeyedTheta::new(&space, cfg.theta.clone().expect("validated"), cfg.seed)?),
            Arc::new(QuadraticUtility::new(*gamma, *ell, *lambda_theta)?),
            admissible,
            cfg.normalization,
        ),
        UtilitySpec::Lq { .. } => Err(Error::config("utility", "the lq reduction needs a finite graph")),
    }
}

fn process_rows(table: &mut Table, space: &ScenarioSpace, label: &[String], p: &ActionProcess) {
    for s in 0..space.atoms() {
        for (j, t) in space.times().iter().enumerate() {
            let mut row = label.to_vec();
            row.extend([s.to_string(), num(*t), num(p.get(s, j))]);
            table.push(row);
        }
    }
}

fn run_solve(game: &Game<FiniteGraph>, tol: f64, max_iter: usize) -> Result<OperationOutput> {
    let opts = SolveOptions {
        tol,
        max_iter,
        record: false,
    };
    let r = game.picard_solve(&opts)?;
    let mut t = Table::new("actions.csv", &["vertex", "scenario", "time", "value"]);
    for &v in game.graph.ids() {
        process_rows(&mut t, &game.space, &[v.to_string()], r.profile.require(v)?);
    }
    Ok(OperationOutput {
        tables: vec![t],
        plot: Vec::new(),
        summary: json!({ "solve": SolveSummary::from(&r), "vertices": game.graph.len() }),
        pass: true,
    })
}

struct TruncRow {
    v: VertexId,
    k: usize,
    error: f64,
    bound: f64,
    pass: bool,
}

fn truncation_output(rows: Vec<TruncRow>, summary: Value) -> OperationOutput {
    let mut t = Table::new("truncate.csv", &["vertex", "k", "error", "bound", "pass"]);
    let mut plot = Vec::new();
    for r in &rows {
        t.push([r.v.to_string(), r.k.to_string(), num(r.error), num(r.bound), r.pass.to_string()]);
        plot.push(PlotPoint {
            series: format!("vertex={}", r.v),
            x: r.k as f64,
            y: r.error,
            bound: r.bound,
        });
    }
    let violations = rows.iter().filter(|r| !r.pass).count();
    let mut summary = summary;
    summary["rows"] = json!(rows.len());
    summary["violations"] = json!(violations);
    OperationOutput {
        tables: vec![t],
        plot,
        summary,
        pass: violations == 0,
    }
}

fn truncate_params(cfg: &ExperimentConfig) -> (&Option<Vec<VertexId>>, &[usize], f64, usize) {
    match &cfg.operation {
        Operation::Truncate {
            vertices,
            ks,
            tol,
            reference_extra,
        } => (vertices, ks, *tol, *reference_extra),
        _ => unreachable!(),
    }
}

fn truncation_rows<G: Graph + ?Sized>(
    game: &Game<G>,
    vertices: &[VertexId],
    ks: &[usize],
    opts: &SolveOptions,
    reference: impl Fn(VertexId) -> Result<(ActionProcess, f64)> + Sync,
) -> Result<Vec<TruncRow>> {
    let (rho, m) = (game.rho(), game.radius());
    let per_vertex = vertices
        .par_iter()
        .map(|&v| {
            let (exact, ref_err) = reference(v)?;
            ks.iter()
                .map(|&k| {
                    let local = game.truncated_local_solve(v, k, opts)?;
                    let error = local.root_action().distance(&exact)?;
                    let bound = 2.0 * rho.powi(k as i32) * m;
                    let slack = ref_err + local.result.a_posteriori + 1e-12;
                    Ok(TruncRow {
                        v,
                        k,
                        error,
                        bound,
                        pass: error <= bound + slack,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_vertex.into_iter().flatten().collect())
}

fn run_truncate_finite(cfg: &ExperimentConfig, game: &Game<FiniteGraph>) -> Result<OperationOutput> {
    let (vertices, ks, tol, _) = truncate_params(cfg);
    let opts = SolveOptions::tol(tol);
    let global = game.picard_solve(&opts)?;
    let vertices = vertices.clone().unwrap_or_else(|| game.graph.ids().to_vec());
    let rows = truncation_rows(game, &vertices, ks, &opts, |v| {
        Ok((global.profile.require(v)?.clone(), global.a_posteriori))
    })?;
    Ok(truncation_output(
        rows,
        json!({ "reference": SolveSummary::from(&global), "rho": game.rho(), "radius": game.radius() }),
    ))
}

fn run_truncate_infinite(cfg: &ExperimentConfig, game: &Game<LazyGraph>) -> Result<OperationOutput> {
    let (vertices, ks, tol, extra) = truncate_params(cfg);
    let opts = SolveOptions::tol(tol);
    let vertices = vertices.clone().unwrap_or_else(|| vec![game.graph.origin()]);
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let (rho, m) = (game.rho(), game.radius());
    let big = kmax + extra;
    let rows = truncation_rows(game, &vertices, ks, &opts, |v| {
        let r = game.truncated_local_solve(v, big, &opts)?;
        Ok((r.root_action().clone(), 2.0 * rho.powi(big as i32) * m + r.result.a_posteriori))
    })?;
    Ok(truncation_output(
        rows,
        json!({ "reference_radius": big, "rho": rho, "radius": m }),
    ))
}

fn reconstruct_params(cfg: &ExperimentConfig) -> (Option<VertexId>, &[usize], f64, f64, usize) {
    match &cfg.operation {
        Operation::Reconstruct {
            center,
            radii,
            tol,
            check_tol,
            reference_extra,
        } => (*center, radii, *tol, *check_tol, *reference_extra),
        _ => unreachable!(),
    }
}

/// Clamped reconstruction of each ball around `center` against `reference`,
/// which must cover the ball; `ref_err` bounds its distance to the exact
/// clamped fixed point.
fn reconstruction_rows<G: Graph + ?Sized>(
    game: &Game<G>,
    center: VertexId,
    radius: usize,
    reference: &ActionProfile,
    ref_err: f64,
    tol: f64,
    check_tol: f64,
) -> Result<(Vec<Vec<String>>, Vec<PlotPoint>, bool)> {
    let b = ball(game.graph.as_ref(), center, radius)?;
    let view = SubgraphView::from_ball(game.graph.as_ref(), &b)?;
    let (_, interior) = view.boundary_interior()?;
    let opts = SolveOptions {
        tol,
        max_iter: 10_000,
        record: true,
    };
    let result = game.clamped_reconstruct(&view, reference, &opts)?;
    let exact = reference.restrict(b.graph.ids().iter().copied())?;
    let errors = result.history_errors(&exact)?;
    let (rho, m) = (game.rho(), game.radius());
    let mut pass = true;
    let mut plot = Vec::new();
    for (j, e) in errors.iter().enumerate() {
        let bound = rho.powi(j as i32) * m;
        pass &= *e <= bound + ref_err + 1e-12;
        plot.push(PlotPoint {
            series: format!("radius={radius}"),
            x: j as f64,
            y: *e,
            bound,
        });
    }
    let mut rows = Vec::new();
    for &v in &interior {
        let e = result.profile.require(v)?.distance(exact.require(v)?)?;
        let ok = e <= check_tol;
        pass &= ok;
        rows.push(vec![radius.to_string(), v.to_string(), num(e), num(check_tol), ok.to_string()]);
    }
    Ok((rows, plot, pass))
}

fn reconstruction_output(parts: Vec<(Vec<Vec<String>>, Vec<PlotPoint>, bool)>, summary: Value) -> OperationOutput {
    let mut t = Table::new("reconstruct.csv", &["radius", "vertex", "error", "tolerance", "pass"]);
    let mut plot = Vec::new();
    let mut pass = true;
    for (rows, p, ok) in parts {
        t.rows.extend(rows);
        plot.extend(p);
        pass &= ok;
    }
    OperationOutput {
        tables: vec![t],
        plot,
        summary,
        pass,
    }
}

fn run_reconstruct_finite(cfg: &ExperimentConfig, game: &Game<FiniteGraph>) -> Result<OperationOutput> {
    let (center, radii, tol, check_tol, _) = reconstruct_params(cfg);
    let global = game.picard_solve(&SolveOptions::tol(tol))?;
    let center = center.unwrap_or(game.graph.id(0));
    let parts = radii
        .par_iter()
        .map(|&r| reconstruction_rows(game, center, r, &global.profile, global.a_posteriori, tol, check_tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(reconstruction_output(
        parts,
        json!({ "center": center, "reference": SolveSummary::from(&global) }),
    ))
}

fn run_reconstruct_infinite(cfg: &ExperimentConfig, game: &Game<LazyGraph>) -> Result<OperationOutput> {
    let (center, radii, tol, check_tol, extra) = reconstruct_params(cfg);
    let center = center.unwrap_or(game.graph.origin());
    let parts = radii
        .par_iter()
        .map(|&r| {
            // Interior fixed-point equations of the large truncated game are
            // exact on B_r, so its restriction is the clamped fixed point.
            let reference = game.truncated_local_solve(center, r + extra, &SolveOptions::tol(tol))?;
            reconstruction_rows(
                game,
                center,
                r,
                &reference.result.profile,
                reference.result.a_posteriori,
                tol,
                check_tol,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reconstruction_output(parts, json!({ "center": center, "reference_extra": extra })))
}

fn run_epsnash(game: &Game<FiniteGraph>, ks: &[usize], tol: f64) -> Result<OperationOutput> {
    let opts = SolveOptions::tol(tol);
    let mut t = Table::new("epsnash.csv", &["k", "exploitability", "bound", "pass"]);
    let mut plot = Vec::new();
    let mut pass = true;
    let rows = ks
        .par_iter()
        .map(|&k| {
            let eps = game.build_eps_nash(k, &opts)?;
            let ex = game.exploitability(&eps.profile)?;
            Ok((k, ex.max, eps.eps))
        })
        .collect::<Result<Vec<_>>>()?;
    for (k, ex, eps) in rows {
        let ok = ex <= eps + 1e-8;
        pass &= ok;
        t.push([k.to_string(), num(ex), num(eps), ok.to_string()]);
        plot.push(PlotPoint {
            series: "exploitability".into(),
            x: k as f64,
            y: ex,
            bound: eps,
        });
    }
    Ok(OperationOutput {
        tables: vec![t],
        plot,
        summary: json!({ "rho": game.rho(), "radius": game.radius() }),
        pass,
    })
}

fn run_corrdecay(cfg: &ExperimentConfig, base: &Path) -> Result<OperationOutput> {
    let Operation::Corrdecay { pairs, from, f1, f2, mode } = &cfg.operation else {
        unreachable!()
    };
    let g = match cfg.graph.as_ref().expect("validated").build(base)? {
        BuiltGraph::Finite(g) => g,
        BuiltGraph::Infinite(_) => return Err(Error::config("graph", "corrdecay needs a finite graph")),
    };
    let Some(UtilitySpec::Quadratic { gamma, ell, lambda_theta }) = &cfg.utility else {
        return Err(Error::config("utility", "corrdecay supports the quadratic utility only"));
    };
    let times = cfg.scenario.as_ref().map(|s| s.times().to_vec()).unwrap_or_else(|| vec![0.0]);
    let steps = times.len();
    let f1 = f1.clone().unwrap_or_else(|| TestFunction::tanh_first(steps));
    let f2 = f2.clone().unwrap_or_else(|| TestFunction::tanh_first(steps));
    let pairs = match pairs {
        Some(p) => p.clone(),
        None => {
            let from = from.unwrap_or(g.id(0));
            g.index_of(from).map_err(|e| Error::config("operation.from", e.to_string()))?;
            g.ids().iter().filter(|&&v| v != from).map(|&v| (from, v)).collect()
        }
    };
    let template = GameTemplate {
        graph: g,
        utility: Arc::new(QuadraticUtility::new(*gamma, *ell, *lambda_theta)?),
        admissible: *cfg.admissible.as_ref().expect("validated"),
        normalization: cfg.normalization,
        times,
        theta: cfg.theta.clone().expect("validated"),
        seed: cfg.seed,
    };
    let reports = decay_profile(&template, &pairs, &f1, &f2, *mode)?;
    let mut t = Table::new("corrdecay.csv", &["u", "v", "distance", "k", "cov", "stderr", "bound", "pass"]);
    let mut plot = Vec::new();
    for (&(u, v), r) in pairs.iter().zip(&reports) {
        t.push([
            u.to_string(),
            v.to_string(),
            opt_num(r.distance),
            opt_num(r.k),
            num(r.cov),
            num(r.stderr),
            num(r.bound),
            r.pass.to_string(),
        ]);
        if let Some(d) = r.distance {
            plot.push(PlotPoint {
                series: format!("from={u}"),
                x: d as f64,
                y: r.cov.abs(),
                bound: r.bound,
            });
        }
    }
    let violations = reports.iter().filter(|r| !r.pass).count();
    Ok(OperationOutput {
        tables: vec![t],
        plot,
        summary: json!({ "mode": mode, "rows": reports.len(), "violations": violations }),
        pass: violations == 0,
    })
}

fn run_lwc(cfg: &ExperimentConfig) -> Result<OperationOutput> {
    let Operation::Lwc {
        sequence,
        ns,
        k,
        buffer,
        replications,
        limit_replications,
        model,
    } = &cfg.operation
    else {
        unreachable!()
    };
    let spec = ConvergenceSpec {
        sequence: *sequence,
        ns: ns.clone(),
        k: *k,
        buffer: *buffer,
        replications: *replications,
        limit_replications: *limit_replications,
        model: *model,
        seed: cfg.seed,
    };
    let outcome = equilibrium_convergence_experiment(&spec)?;
    let mut t = Table::new(
        "lwc.csv",
        &["n", "family", "finite", "finite_stderr", "limit", "limit_stderr", "gap", "budget"],
    );
    let mut plot = Vec::new();
    for rep in &outcome.reports {
        for r in &rep.rows {
            t.push([
                r.n.to_string(),
                r.h_id.to_string(),
                num(r.finite_avg),
                num(r.finite_stderr),
                num(r.limit_est),
                num(r.limit_stderr),
                num(r.gap),
                num(r.budget),
            ]);
        }
        plot.push(PlotPoint {
            series: "max_gap".into(),
            x: rep.n as f64,
            y: rep.max_gap(),
            bound: outcome.budget,
        });
    }
    Ok(OperationOutput {
        tables: vec![t],
        plot,
        summary: json!({
            "budget": outcome.budget,
            "decreasing": outcome.decreasing,
            "final_within_budget": outcome.final_within_budget,
        }),
        pass: outcome.pass(),
    })
}

fn run_mtp(cfg: &ExperimentConfig, base: &Path) -> Result<OperationOutput> {
    let Operation::Mtp { transport, root_law, tol } = &cfg.operation else {
        unreachable!()
    };
    let g = match cfg.graph.as_ref().expect("validated").build(base)? {
        BuiltGraph::Finite(g) => g,
        BuiltGraph::Infinite(_) => return Err(Error::config("graph", "mtp needs a finite graph")),
    };
    let law = match root_law {
        RootLaw::Uniform => uniform_root_law(&g),
        RootLaw::Fixed { root } => fixed_root_law(
            &g,
            g.index_of(*root)
                .map_err(|e| Error::config("operation.root_law.root", e.to_string()))?,
        ),
        RootLaw::Weights { weights } => weights.clone(),
    };
    let transport = *transport;
    let report = mtp_check(
        &g,
        &law,
        move |g, a, b| match transport {
            Transport::DegreeToNeighbor if g.has_edge(a, b) => g.degree_of(a) as f64,
            Transport::UnitToNeighbor if g.has_edge(a, b) => 1.0,
            Transport::Distance => g.distances_from(a)[b] as f64,
            _ => 0.0,
        },
        *tol,
    )?;
    let mut t = Table::new("mtp.csv", &["sent", "received", "difference", "pass"]);
    t.push([
        num(report.sent),
        num(report.received),
        num(report.sent - report.received),
        report.pass.to_string(),
    ]);
    Ok(OperationOutput {
        tables: vec![t],
        plot: Vec::new(),
        summary: json!(report),
        pass: report.pass,
    })
}

fn random_strict_lower(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if j < i { rng.random_range(-1.0..1.0) } else { 0.0 }).collect())
        .collect()
}

/// `J_v` by forward simulation of every state on the time grid.
fn simulated_payoff(
    game: &LqStateGame,
    g: &FiniteGraph,
    norm: &Normalization,
    actions: &ActionProfile,
    eta: &ActionProfile,
    idx: usize,
) -> Result<f64> {
    let states = |u: usize| game.kernel.state_implicit(actions.require(g.id(u))?, eta.require(g.id(u))?);
    let xv = states(idx)?;
    let neighbors = g.adjacent(idx).iter().map(|&u| states(u)).collect::<Result<Vec<_>>>()?;
    let w = norm.weight(g.degree_of(idx));
    let av = actions.require(g.id(idx))?;
    let c = game.coefficients;
    let sp = av.space();
    let n = sp.steps();
    let mut total = 0.0;
    for s in 0..sp.atoms() {
        let mut val = 0.0;
        for t in 0..n {
            let z: f64 = w * neighbors.iter().map(|x| x.get(s, t)).sum::<f64>();
            let (x, a) = (xv.get(s, t), av.get(s, t));
            val += -0.5 * c.q * x * x - 0.5 * c.r * a * a + c.c * a * z;
        }
        let xt = xv.get(s, n - 1);
        val += -0.5 * c.q_terminal * xt * xt;
        total += sp.probs()[s] * val;
    }
    Ok(total)
}

fn run_volterra(cfg: &ExperimentConfig, base: &Path) -> Result<OperationOutput> {
    let Operation::VolterraCheck {
        instances,
        points,
        atoms,
        tol,
    } = &cfg.operation
    else {
        unreachable!()
    };
    let times: Vec<f64> = (0..*points).map(|j| j as f64).collect();
    let space = Arc::new(ScenarioSpace::uniform(*atoms, times, NamedFiltration::RevealAtStart)?);
    let mut t = Table::new("volterra.csv", &["instance", "max_abs_diff", "pass"]);
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for i in 0..*instances {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, i as i64));
        let (k, l) = (random_strict_lower(&mut rng, *points), random_strict_lower(&mut rng, *points));
        let kernel = VolterraKernel::from_rows(&k, &l)?;
        let a = ActionProcess::from_fn(&space, |_, _| rng.random_range(-1.0..1.0));
        let eta = ActionProcess::from_fn(&space, |_, _| rng.random_range(-1.0..1.0));
        let x1 = kernel.state_explicit(&a, &eta)?;
        let x2 = kernel.state_implicit(&a, &eta)?;
        let d = x1
            .values()
            .iter()
            .zip(x2.values())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        let ok = d <= *tol;
        pass &= ok;
        worst = worst.max(d);
        t.push([i.to_string(), num(d), ok.to_string()]);
    }
    let mut tables = vec![t];
    let mut summary = json!({ "instances": instances, "max_abs_diff": worst });
    if let (Some(spec @ UtilitySpec::Lq { eta, .. }), Some(graph)) = (&cfg.utility, &cfg.graph) {
        let BuiltGraph::Finite(g) = graph.build(base)? else {
            return Err(Error::config("graph", "the lq reduction needs a finite graph"));
        };
        let lq = spec.lq_game()?.expect("lq");
        let space = space_of(cfg)?;
        let eta = sample_theta(&space, g.ids().iter().copied(), eta, cfg.seed)?;
        let red = lq.reduce(&g, &eta, &cfg.normalization)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, -7));
        let mut actions = ActionProfile::new(&space);
        for &v in g.ids() {
            actions.insert(v, ActionProcess::from_fn(&space, |_, _| rng.random_range(-1.0..1.0)).adapted())?;
        }
        let mut lt = Table::new("lq.csv", &["vertex", "reduced", "simulated", "abs_diff", "pass"]);
        let mut lq_worst: f64 = 0.0;
        for (idx, &v) in g.ids().iter().enumerate() {
            let mut z = ActionProcess::zeros(&space);
            let w = cfg.normalization.weight(g.degree_of(idx));
            for &u in g.adjacent(idx) {
                z.add_scaled(w, actions.require(g.id(u))?)?;
            }
            let reduced = reduced_payoff(&red.utility, actions.require(v)?, &z, red.theta.require(v)?)? + red.offsets[&v];
            let direct = simulated_payoff(&lq, &g, &cfg.normalization, &actions, &eta, idx)?;
            let d = (reduced - direct).abs();
            let ok = d <= *tol;
            pass &= ok;
            lq_worst = lq_worst.max(d);
            lt.push([v.to_string(), num(reduced), num(direct), num(d), ok.to_string()]);
        }
        summary["lq_max_abs_diff"] = json!(lq_worst);
        tables.push(lt);
    }
    Ok(OperationOutput {
        tables,
        plot: Vec::new(),
        summary,
        pass,
    })
}

fn reduced_payoff(u: &LqUtility, a: &ActionProcess, z: &ActionProcess, theta: &ActionProcess) -> Result<f64> {
    u.evaluate(a, z, theta)
}

/// Installs the global worker pool from `SPARSE_NASH_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SPARSE_NASH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::config("SPARSE_NASH_THREADS", format!("not a positive integer: {raw:?}")))?;
    if n == 0 {
        return Err(Error::config("SPARSE_NASH_THREADS", "must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config("SPARSE_NASH_THREADS", e.to_string()))
}
