//! Empirical local weak convergence of equilibrium-marked graphs.
//!
//! The marked test family evaluated at a rooted ball `B_k(G, v)` with marks
//! `x` (the time average of each equilibrium path) is
//!
//! * `iso_class`: `1{B_k(G, v) ≅ B_k(limit)}`,
//! * `root_mark`: `tanh(x_v)`,
//! * `iso_ball_mean`: `iso_class * tanh(mean_{u in B_k} x_u)`,
//! * `root_neighbor`: `tanh(x_v * mean_{u ~ v} x_u)`.
//!
//! Replications of the heterogeneity are stacked as atoms of one scenario
//! space revealed at time zero. With a box action set the best response acts
//! atom by atom, so one solve yields every replication.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{Game, SolveOptions};
use crate::error::{Error, Result};
use crate::graph::{ball, cycle, path, torus, Ball, FiniteGraph, Graph, LazyGraph, Normalization, VertexId};
use crate::process::{ActionProfile, AdmissibleSet, NamedFiltration, ScenarioSpace};
use crate::theta::{stream_seed, KeyedTheta, ThetaGenerator};
use crate::utility::QuadraticUtility;

use super::exhaustion::sample_block_exhaustion_z;
use super::iso::ball_isomorphic;

pub const FAMILY: [&str; 4] = ["iso_class", "root_mark", "iso_ball_mean", "root_neighbor"];
pub const FAMILY_SIZE: usize = FAMILY.len();

/// Largest ball enumerated exhaustively on the limit side, in sign bits.
pub const LIMIT_EXHAUSTIVE_BITS: usize = 18;

/// Per-function means and standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyEstimate {
    pub mean: [f64; FAMILY_SIZE],
    pub stderr: [f64; FAMILY_SIZE],
}

fn time_average(path: &[f64]) -> f64 {
    path.iter().sum::<f64>() / path.len() as f64
}

/// Family values at the root of `b` for every atom of `marks`.
fn family_on_ball(b: &Ball, iso: bool, marks: &ActionProfile) -> Result<Vec<[f64; FAMILY_SIZE]>> {
    let g = &b.graph;
    let procs = g.ids().iter().map(|&v| marks.require(v)).collect::<Result<Vec<_>>>()?;
    let root_nbrs = g.adjacent(0);
    let iso_f = if iso { 1.0 } else { 0.0 };
    let atoms = marks.space().atoms();
    Ok((0..atoms)
        .map(|s| {
            let x: Vec<f64> = procs.iter().map(|p| time_average(p.path(s))).collect();
            let ball_mean = x.iter().sum::<f64>() / x.len() as f64;
            let nbr_mean = if root_nbrs.is_empty() {
                0.0
            } else {
                root_nbrs.iter().map(|&u| x[u]).sum::<f64>() / root_nbrs.len() as f64
            };
            [iso_f, x[0].tanh(), iso_f * ball_mean.tanh(), (x[0] * nbr_mean).tanh()]
        })
        .collect())
}

/// Mean and standard error over atoms treated as iid replications.
fn summarize(per_atom: &[[f64; FAMILY_SIZE]], probs: &[f64], replicated: bool) -> FamilyEstimate {
    let mut mean = [0.0; FAMILY_SIZE];
    for (row, &p) in per_atom.iter().zip(probs) {
        for i in 0..FAMILY_SIZE {
            mean[i] += p * row[i];
        }
    }
    let mut stderr = [0.0; FAMILY_SIZE];
    let n = per_atom.len() as f64;
    if replicated && per_atom.len() > 1 {
        for i in 0..FAMILY_SIZE {
            let var = per_atom.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
            stderr[i] = (var / n).sqrt();
        }
    }
    FamilyEstimate { mean, stderr }
}

/// Vertex average of the family on a finite marked graph, per atom.
pub fn finite_family_values(
    g: &FiniteGraph,
    marks: &ActionProfile,
    reference: &FiniteGraph,
    k: usize,
) -> Result<Vec<[f64; FAMILY_SIZE]>> {
    let atoms = marks.space().atoms();
    let per_vertex = g
        .ids()
        .par_iter()
        .map(|&v| {
            let b = ball(g, v, k)?;
            let iso = ball_isomorphic(&b.graph, reference)?.is_some();
            family_on_ball(&b, iso, marks)
        })
        .collect::<Result<Vec<_>>>()?;
    let w = 1.0 / g.len() as f64;
    let mut avg = vec![[0.0; FAMILY_SIZE]; atoms];
    for rows in &per_vertex {
        for (a, r) in avg.iter_mut().zip(rows) {
            for i in 0..FAMILY_SIZE {
                a[i] += w * r[i];
            }
        }
    }
    Ok(avg)
}

/// Model shared by both sides: quadratic utility, box actions `[-bound, bound]`,
/// static Rademacher heterogeneity of size `theta_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LwcModel {
    pub gamma: f64,
    pub ell: f64,
    pub lambda_theta: f64,
    pub bound: f64,
    #[serde(default = "one")]
    pub theta_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LwcModel {
    fn default() -> Self {
        LwcModel {
            gamma: 1.0,
            ell: 0.5,
            lambda_theta: 1.0,
            bound: 4.0,
            theta_scale: 1.0,
        }
    }
}

impl LwcModel {
    fn utility(&self) -> Result<Arc<QuadraticUtility>> {
        Ok(Arc::new(QuadraticUtility::new(self.gamma, self.ell, self.lambda_theta)?))
    }

    pub fn rho(&self) -> f64 {
        self.ell.abs() / self.gamma
    }

    /// `2 rho^buffer M`.
    pub fn budget(&self, buffer: usize) -> f64 {
        2.0 * self.rho().powi(buffer as i32) * self.bound
    }

    fn game<G: Graph>(&self, graph: Arc<G>, space: &Arc<ScenarioSpace>, generator: ThetaGenerator, seed: u64) -> Result<Game<G>> {
        let theta = Arc::new(KeyedTheta::new(space, generator, seed)?);
        Game::new(
            graph,
            space.clone(),
            theta,
            self.utility()?,
            AdmissibleSet::Box {
                lo: -self.bound,
                hi: self.bound,
            },
            Normalization::Degree,
        )
    }

    fn replicated_space(replications: usize) -> Result<Arc<ScenarioSpace>> {
        if replications < 2 {
            return Err(Error::config("replications", "need at least 2 replications"));
        }
        Ok(Arc::new(ScenarioSpace::uniform(replications, vec![0.0], NamedFiltration::RevealAtStart)?))
    }

    fn rademacher(&self) -> ThetaGenerator {
        ThetaGenerator::IidRademacher { scale: self.theta_scale }
    }

    /// Solves the finite game with `replications` independent draws.
    pub fn solve_finite(&self, g: &FiniteGraph, replications: usize, seed: u64) -> Result<ActionProfile> {
        let space = Self::replicated_space(replications)?;
        let game = self.game(Arc::new(g.clone()), &space, self.rademacher(), seed)?;
        Ok(game.picard_solve(&SolveOptions::tol(1e-12))?.profile)
    }

    /// Family estimate at `root` of an infinite graph: the equilibrium on
    /// `B_k(root)` is approximated by the truncated game on `B_{k+buffer}`.
    /// Small balls are enumerated exhaustively, larger ones sampled.
    pub fn limit_estimate(
        &self,
        limit: &LazyGraph,
        root: VertexId,
        k: usize,
        buffer: usize,
        replications: usize,
        seed: u64,
    ) -> Result<FamilyEstimate> {
        let big = ball(limit, root, k + buffer)?;
        let n = big.graph.len();
        let (space, generator, replicated) = if n <= LIMIT_EXHAUSTIVE_BITS {
            let space = Arc::new(ScenarioSpace::exhaustive_signs(n, vec![0.0])?);
            let generator = ThetaGenerator::ExhaustiveSigns {
                vertices: big.graph.ids().to_vec(),
                scale: self.theta_scale,
            };
            (space, generator, false)
        } else {
            (Self::replicated_space(replications)?, self.rademacher(), true)
        };
        let game = self.game(Arc::new(limit.clone()), &space, generator, seed)?;
        let local = game.truncated_local_solve(root, k + buffer, &SolveOptions::tol(1e-12))?;
        let small = ball(limit, root, k)?;
        let values = family_on_ball(&small, true, &local.result.profile)?;
        Ok(summarize(&values, space.probs(), replicated))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscrepancyRow {
    pub n: usize,
    pub h_id: &'static str,
    pub finite_avg: f64,
    pub finite_stderr: f64,
    pub limit_est: f64,
    pub limit_stderr: f64,
    pub gap: f64,
    pub budget: f64,
}

impl DiscrepancyRow {
    pub fn stderr(&self) -> f64 {
        self.finite_stderr.hypot(self.limit_stderr)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscrepancyReport {
    pub n: usize,
    pub rows: Vec<DiscrepancyRow>,
}

impl DiscrepancyReport {
    pub fn worst(&self) -> &DiscrepancyRow {
        self.rows
            .iter()
            .max_by(|a, b| a.gap.total_cmp(&b.gap))
            .expect("family is nonempty")
    }

    pub fn max_gap(&self) -> f64 {
        self.worst().gap
    }
}

/// Compares a finite family estimate with a limit estimate.
pub fn empirical_lwc_gap(n: usize, finite: &FamilyEstimate, limit: &FamilyEstimate, budget: f64) -> DiscrepancyReport {
    let rows = (0..FAMILY_SIZE)
        .map(|i| DiscrepancyRow {
            n,
            h_id: FAMILY[i],
            finite_avg: finite.mean[i],
            finite_stderr: finite.stderr[i],
            limit_est: limit.mean[i],
            limit_stderr: limit.stderr[i],
            gap: (finite.mean[i] - limit.mean[i]).abs(),
            budget,
        })
        .collect();
    DiscrepancyReport { n, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSequence {
    /// `C_n` towards the line.
    Cycles,
    /// `P_n` towards the line.
    Paths,
    /// `n x n` tori towards the square lattice.
    Tori,
    /// Root components of the block exhaustion of the line.
    BlockExhaustion,
}

impl GraphSequence {
    pub fn limit(&self) -> LazyGraph {
        match self {
            GraphSequence::Tori => LazyGraph::Lattice2d,
            _ => LazyGraph::Line,
        }
    }

    pub fn limit_root(&self) -> VertexId {
        match self {
            GraphSequence::Tori => VertexId::lattice(0, 0),
            _ => VertexId(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSpec {
    pub sequence: GraphSequence,
    pub ns: Vec<usize>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_buffer")]
    pub buffer: usize,
    /// Heterogeneity draws per finite graph.
    #[serde(default = "default_reps")]
    pub replications: usize,
    /// Draws for the limit side when the ball is too large to enumerate.
    #[serde(default = "default_limit_reps")]
    pub limit_replications: usize,
    #[serde(default)]
    pub model: LwcModel,
    pub seed: u64,
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

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceOutcome {
    pub limit: FamilyEstimate,
    pub reports: Vec<DiscrepancyReport>,
    pub budget: f64,
    /// Max gap strictly decreasing along `ns`.
    pub decreasing: bool,
    /// Final max gap within `3 (stderr + budget)`.
    pub final_within_budget: bool,
}

impl ConvergenceOutcome {
    pub fn pass(&self) -> bool {
        self.decreasing && self.final_within_budget
    }
}

/// Finite-side family estimate for one member of the sequence.
pub fn finite_estimate(spec: &ConvergenceSpec, n: usize, reference: &FiniteGraph) -> Result<FamilyEstimate> {
    let model = &spec.model;
    let reps = spec.replications;
    let seed = stream_seed(spec.seed, n as i64);
    let per_atom = match spec.sequence {
        GraphSequence::Cycles | GraphSequence::Paths | GraphSequence::Tori => {
            let g = match spec.sequence {
                GraphSequence::Cycles => cycle(n)?,
                GraphSequence::Paths => path(n)?,
                _ => torus(n, n)?,
            };
            let marks = model.solve_finite(&g, reps, seed)?;
            finite_family_values(&g, &marks, reference, spec.k)?
        }
        GraphSequence::BlockExhaustion => {
            // Replications share a block when they draw the same offset.
            let mut groups: std::collections::BTreeMap<i64, (FiniteGraph, usize)> = Default::default();
            for r in 0..reps {
                let s = sample_block_exhaustion_z(n, stream_seed(spec.seed, r as i64))?;
                groups.entry(s.start).or_insert((s.graph, 0)).1 += 1;
            }
            let mut all = Vec::with_capacity(reps);
            for (start, (g, count)) in groups {
                let values = if count >= 2 {
                    let marks = model.solve_finite(&g, count, stream_seed(seed, start))?;
                    finite_family_values(&g, &marks, reference, spec.k)?
                } else {
                    let marks = model.solve_finite(&g, 2, stream_seed(seed, start))?;
                    finite_family_values(&g, &marks, reference, spec.k)?[..1].to_vec()
                };
                all.extend(values);
            }
            all
        }
    };
    let probs = vec![1.0 / per_atom.len() as f64; per_atom.len()];
    Ok(summarize(&per_atom, &probs, true))
}

pub fn equilibrium_convergence_experiment(spec: &ConvergenceSpec) -> Result<ConvergenceOutcome> {
    if spec.ns.is_empty() {
        return Err(Error::config("ns", "need at least one graph size"));
    }
    let limit_graph = spec.sequence.limit();
    let root = spec.sequence.limit_root();
    let reference = ball(&limit_graph, root, spec.k)?.graph;
    let budget = spec.model.budget(spec.buffer);
    let limit = spec.model.limit_estimate(
        &limit_graph,
        root,
        spec.k,
        spec.buffer,
        spec.limit_replications,
        stream_seed(spec.seed, -1),
    )?;
    let reports = spec
        .ns
        .iter()
        .map(|&n| Ok(empirical_lwc_gap(n, &finite_estimate(spec, n, &reference)?, &limit, budget)))
        .collect::<Result<Vec<_>>>()?;
    let decreasing = reports.windows(2).all(|w| w[1].max_gap() < w[0].max_gap());
    let last = reports.last().expect("ns is nonempty").worst();
    let final_within_budget = last.gap <= 3.0 * (last.stderr() + budget);
    Ok(ConvergenceOutcome {
        limit,
        reports,
        budget,
        decreasing,
        final_within_budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_reference(k: usize) -> FiniteGraph {
        ball(&LazyGraph::Line, VertexId(0), k).unwrap().graph
    }

    #[test]
    fn unmarked_indicator_on_cycles_and_paths() {
        let sp = Arc::new(ScenarioSpace::single());
        let reference = path_reference(2);
        for n in [6, 9, 20] {
            let g = cycle(n).unwrap();
            let marks = ActionProfile::zeros(&sp, g.ids().iter().copied());
            let v = finite_family_values(&g, &marks, &reference, 2).unwrap();
            assert!((v[0][0] - 1.0).abs() < 1e-12);
        }
        let g = cycle(5).unwrap();
        let marks = ActionProfile::zeros(&sp, g.ids().iter().copied());
        assert_eq!(finite_family_values(&g, &marks, &reference, 2).unwrap()[0][0], 0.0);
        for n in [5, 8, 16, 40] {
            let g = path(n).unwrap();
            let marks = ActionProfile::zeros(&sp, g.ids().iter().copied());
            let v = finite_family_values(&g, &marks, &reference, 2).unwrap();
            assert!((v[0][0] - (n - 4) as f64 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_heterogeneity_leaves_only_the_iso_gap() {
        let model = LwcModel { theta_scale: 0.0, ..Default::default() };
        let spec = ConvergenceSpec {
            sequence: GraphSequence::Paths,
            ns: vec![10, 20],
            k: 2,
            buffer: 2,
            replications: 4,
            limit_replications: 10,
            model,
            seed: 1,
        };
        let out = equilibrium_convergence_experiment(&spec).unwrap();
        for r in &out.reports {
            assert!((r.rows[0].gap - 4.0 / r.n as f64).abs() < 1e-15);
            for row in &r.rows[1..] {
                assert_eq!(row.gap, 0.0);
            }
        }
    }

    #[test]
    fn line_limit_against_brute_force() {
        // radius 1 around the origin with buffer 1: 5 vertices, 32 patterns
        let model = LwcModel::default();
        let est = model.limit_estimate(&LazyGraph::Line, VertexId(0), 1, 1, 10, 3).unwrap();
        let mut acc = [0.0; FAMILY_SIZE];
        for pattern in 0..32u32 {
            let th: Vec<f64> = (0..5).map(|i| if pattern >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            // positions -2..=2 mapped to 0..5, degrees all 2 in the line
            let mut a = [0.0f64; 5];
            for _ in 0..200 {
                let prev = a;
                for i in 0..5 {
                    let left = if i > 0 { prev[i - 1] } else { 0.0 };
                    let right = if i < 4 { prev[i + 1] } else { 0.0 };
                    a[i] = (0.5 * (left + right) / 2.0 + th[i]).clamp(-4.0, 4.0);
                }
            }
            let nbr = (a[1] + a[3]) / 2.0;
            let mean = (a[1] + a[2] + a[3]) / 3.0;
            let h = [1.0, a[2].tanh(), mean.tanh(), (a[2] * nbr).tanh()];
            for i in 0..FAMILY_SIZE {
                acc[i] += h[i] / 32.0;
            }
        }
        for i in 0..FAMILY_SIZE {
            assert!((est.mean[i] - acc[i]).abs() < 1e-10, "{i}: {} vs {}", est.mean[i], acc[i]);
            assert_eq!(est.stderr[i], 0.0);
        }
    }

    #[test]
    fn lattice_limit_self_comparison() {
        let model = LwcModel::default();
        let a = model.limit_estimate(&LazyGraph::Lattice2d, VertexId::lattice(0, 0), 1, 2, 3000, 11).unwrap();
        let b = model.limit_estimate(&LazyGraph::Lattice2d, VertexId::lattice(0, 0), 1, 2, 3000, 12).unwrap();
        for i in 0..FAMILY_SIZE {
            let se = a.stderr[i].hypot(b.stderr[i]);
            assert!((a.mean[i] - b.mean[i]).abs() <= 4.0 * se + 1e-15, "{i}");
        }
    }
}
