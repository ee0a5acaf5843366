//! Picard solver for the Nash equilibrium and its local variants: truncated
//! local games, epsilon-Nash assembly, clamped reconstruction.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{ball, Ball, FiniteGraph, Graph, Normalization, SubgraphView, VertexId};
use crate::process::{ActionProcess, ActionProfile, AdmissibleSet, ScenarioSpace};
use crate::theta::ThetaSource;
use crate::utility::Utility;

/// A game `(graph, scenario space, theta, U, admissible set)`.
#[derive(Clone)]
pub struct Game<G: Graph + ?Sized = FiniteGraph> {
    pub graph: Arc<G>,
    pub space: Arc<ScenarioSpace>,
    pub theta: Arc<dyn ThetaSource>,
    pub utility: Arc<dyn Utility>,
    pub admissible: AdmissibleSet,
    pub normalization: Normalization,
    rho: f64,
}

pub type GameSpec = Game<FiniteGraph>;

impl<G: Graph + ?Sized> std::fmt::Debug for Game<G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Game")
            .field("utility", &self.utility)
            .field("admissible", &self.admissible)
            .field("normalization", &self.normalization)
            .field("rho", &self.rho)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep every iterate `a^(0), a^(1), ...` of the sweep.
    pub record: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 10_000,
            record: false,
        }
    }
}

impl SolveOptions {
    pub fn tol(tol: f64) -> Self {
        SolveOptions { tol, ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub profile: ActionProfile,
    /// Number of sweeps `k` that produced the returned iterate `a^(k)`.
    pub iterations: usize,
    /// Fixed-point residual `sup_v ||a^(k) - (B G a^(k))_v||` of the returned profile.
    pub residual: f64,
    pub rho: f64,
    pub radius: f64,
    /// `rho^k M`.
    pub a_priori: f64,
    /// `residual / (1 - rho)`, a bound on the distance to the equilibrium.
    pub a_posteriori: f64,
    pub history: Option<Vec<ActionProfile>>,
}

impl EquilibriumResult {
    /// `sup_v ||a^(j) - reference_v||` for each recorded iterate.
    pub fn history_errors(&self, reference: &ActionProfile) -> Result<Vec<f64>> {
        let hist = self
            .history
            .as_ref()
            .ok_or_else(|| Error::Hypothesis("iterates were not recorded".into()))?;
        hist.iter().map(|a| a.sup_distance(reference)).collect()
    }
}

/// Summary numbers that go into manifests.
#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub residual: f64,
    pub rho: f64,
    pub radius: f64,
    pub a_priori: f64,
    pub a_posteriori: f64,
}

impl From<&EquilibriumResult> for SolveSummary {
    fn from(r: &EquilibriumResult) -> Self {
        SolveSummary {
            iterations: r.iterations,
            residual: r.residual,
            rho: r.rho,
            radius: r.radius,
            a_priori: r.a_priori,
            a_posteriori: r.a_posteriori,
        }
    }
}

/// `ceil(log(tol / M) / log(rho))`, the sweep count after which the
/// a-priori bound drops below `tol`.
pub fn a_priori_iterations(rho: f64, radius: f64, tol: f64) -> usize {
    if radius <= tol || rho <= 0.0 {
        return if radius <= tol { 0 } else { 1 };
    }
    ((tol / radius).ln() / rho.ln()).ceil().max(0.0) as usize
}

/// Vertices with fixed neighbor lists and weights; only `active` ones update.
struct LocalSystem {
    ids: Vec<VertexId>,
    nbrs: Vec<Vec<usize>>,
    weights: Vec<f64>,
    active: Vec<bool>,
    theta: Vec<ActionProcess>,
}

struct SweepOutcome {
    values: Vec<ActionProcess>,
    iterations: usize,
    residual: f64,
    history: Option<Vec<Vec<ActionProcess>>>,
}

impl LocalSystem {
    fn aggregate(&self, i: usize, a: &[ActionProcess], space: &Arc<ScenarioSpace>) -> ActionProcess {
        let mut z = ActionProcess::zeros(space);
        let w = self.weights[i];
        {
            let zv = z.values_mut();
            for &u in &self.nbrs[i] {
                for (x, y) in zv.iter_mut().zip(a[u].values()) {
                    *x += y;
                }
            }
            for x in zv.iter_mut() {
                *x *= w;
            }
        }
        z
    }

    fn sweep<G: Graph + ?Sized>(&self, game: &Game<G>, a: &[ActionProcess]) -> Result<Vec<ActionProcess>> {
        (0..self.ids.len())
            .into_par_iter()
            .map(|i| {
                if !self.active[i] {
                    return Ok(a[i].clone());
                }
                let z = self.aggregate(i, a, &game.space);
                game.utility.best_response(&z, &self.theta[i], &game.admissible)
            })
            .collect()
    }

    fn solve<G: Graph + ?Sized>(&self, game: &Game<G>, init: Vec<ActionProcess>, opts: &SolveOptions) -> Result<SweepOutcome> {
        let mut a = init;
        let mut history = opts.record.then(|| vec![a.clone()]);
        let mut residual = f64::INFINITY;
        for k in 0..=opts.max_iter {
            let next = self.sweep(game, &a)?;
            residual = 0.0;
            for i in 0..a.len() {
                if self.active[i] {
                    residual = f64::max(residual, next[i].distance(&a[i])?);
                }
            }
            if residual <= opts.tol {
                return Ok(SweepOutcome {
                    values: a,
                    iterations: k,
                    residual,
                    history,
                });
            }
            if let Some(h) = history.as_mut() {
                h.push(next.clone());
            }
            a = next;
        }
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            residual,
        })
    }
}

fn to_profile(space: &Arc<ScenarioSpace>, ids: &[VertexId], values: Vec<ActionProcess>, keep: impl Fn(usize) -> bool) -> Result<ActionProfile> {
    let mut p = ActionProfile::new(space);
    for (i, v) in values.into_iter().enumerate() {
        if keep(i) {
            p.insert(ids[i], v)?;
        }
    }
    Ok(p)
}

impl<G: Graph + ?Sized> Game<G> {
    /// Checks the contraction condition and the admissible set.
    pub fn new(
        graph: Arc<G>,
        space: Arc<ScenarioSpace>,
        theta: Arc<dyn ThetaSource>,
        utility: Arc<dyn Utility>,
        admissible: AdmissibleSet,
        normalization: Normalization,
    ) -> Result<Self> {
        let rho = utility.constants().certify()?;
        admissible.validate()?;
        if let Normalization::Uniform { bound } = normalization {
            if bound == 0 {
                return Err(Error::Hypothesis("uniform degree bound must be positive".into()));
            }
        }
        Ok(Game {
            graph,
            space,
            theta,
            utility,
            admissible,
            normalization,
            rho,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `M = sup_{a in A_0} ||a||`.
    pub fn radius(&self) -> f64 {
        self.admissible.radius_bound(&self.space)
    }

    fn result(&self, ids: &[VertexId], out: SweepOutcome, keep: impl Fn(usize) -> bool + Copy) -> Result<EquilibriumResult> {
        let m = self.radius();
        let history = match out.history {
            Some(h) => Some(
                h.into_iter()
                    .map(|vals| to_profile(&self.space, ids, vals, keep))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(EquilibriumResult {
            profile: to_profile(&self.space, ids, out.values, keep)?,
            iterations: out.iterations,
            residual: out.residual,
            rho: self.rho,
            radius: m,
            a_priori: self.rho.powi(out.iterations as i32) * m,
            a_posteriori: out.residual / (1.0 - self.rho),
            history,
        })
    }

    fn ball_system(&self, b: &Ball) -> Result<LocalSystem> {
        let n = b.graph.len();
        Ok(LocalSystem {
            ids: b.graph.ids().to_vec(),
            nbrs: (0..n).map(|i| b.graph.adjacent(i).to_vec()).collect(),
            weights: b.ambient_degree.iter().map(|&d| self.normalization.weight(d)).collect(),
            active: vec![true; n],
            theta: b
                .graph
                .ids()
                .iter()
                .map(|&v| self.theta.theta(v))
                .collect::<Result<_>>()?,
        })
    }

    /// Equilibrium of the game truncated to `B_k(G, v)`: neighbor sums run
    /// over the ball only, normalization uses the ambient degree.
    pub fn truncated_local_solve(&self, v: VertexId, k: usize, opts: &SolveOptions) -> Result<LocalSolve> {
        let b = ball(self.graph.as_ref(), v, k)?;
        let sys = self.ball_system(&b)?;
        let init = vec![ActionProcess::zeros(&self.space); sys.ids.len()];
        let out = sys.solve(self, init, opts)?;
        let result = self.result(&sys.ids, out, |_| true)?;
        Ok(LocalSolve { ball: b, result })
    }

    /// Iterates the clamped best response on the interior of `h` with the
    /// boundary frozen at `boundary`, starting from zero.
    pub fn clamped_reconstruct(
        &self,
        h: &SubgraphView<'_, G>,
        boundary: &ActionProfile,
        opts: &SolveOptions,
    ) -> Result<EquilibriumResult> {
        let (bd, interior) = h.boundary_interior()?;
        let ids: Vec<VertexId> = h.vertices.iter().copied().collect();
        let index: BTreeMap<VertexId, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut init = vec![ActionProcess::zeros(&self.space); ids.len()];
        for &u in &bd {
            let b = boundary.get(u).ok_or(Error::IncompleteBoundary(u))?;
            if !crate::process::same_space(b.space(), &self.space) {
                return Err(Error::SpaceMismatch);
            }
            init[index[&u]] = b.clone();
        }
        let interior_set: std::collections::BTreeSet<VertexId> = interior.iter().copied().collect();
        let mut nbrs = Vec::with_capacity(ids.len());
        let mut weights = Vec::with_capacity(ids.len());
        let mut theta = Vec::with_capacity(ids.len());
        let zero = ActionProcess::zeros(&self.space);
        for &v in &ids {
            let list = h.parent.neighbors(v)?;
            weights.push(self.normalization.weight(list.len()));
            nbrs.push(list.iter().filter_map(|w| index.get(w).copied()).collect());
            theta.push(if interior_set.contains(&v) { self.theta.theta(v)? } else { zero.clone() });
        }
        let active: Vec<bool> = ids.iter().map(|v| interior_set.contains(v)).collect();
        let sys = LocalSystem {
            ids: ids.clone(),
            nbrs,
            weights,
            active: active.clone(),
            theta,
        };
        let out = sys.solve(self, init, opts)?;
        self.result(&ids, out, |i| active[i])
    }

    /// `sup_v ||theta_v||` over the given vertices.
    pub fn theta_max<I: IntoIterator<Item = VertexId>>(&self, vertices: I) -> Result<f64> {
        let mut m: f64 = 0.0;
        for v in vertices {
            m = m.max(self.theta.theta(v)?.norm());
        }
        Ok(m)
    }

    /// `(L_a, L_z)` on the `M`-ball given `sup ||theta_v||`.
    pub fn payoff_lipschitz(&self, theta_max: f64) -> Result<(f64, f64)> {
        self.utility
            .payoff_lipschitz(self.radius(), theta_max)
            .ok_or_else(|| Error::Hypothesis("utility provides no payoff Lipschitz constants".into()))
    }
}

#[derive(Debug, Clone)]
pub struct LocalSolve {
    pub ball: Ball,
    pub result: EquilibriumResult,
}

impl LocalSolve {
    pub fn root_action(&self) -> &ActionProcess {
        self.result
            .profile
            .get(self.ball.root_id())
            .expect("ball root is part of the local profile")
    }
}

#[derive(Debug, Clone)]
pub struct EpsNash {
    pub profile: ActionProfile,
    pub k: usize,
    pub eps: f64,
    pub l_a: f64,
    pub l_z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Exploitability {
    pub gaps: BTreeMap<VertexId, f64>,
    pub max: f64,
}

impl Game<FiniteGraph> {
    fn global_system(&self) -> Result<LocalSystem> {
        let g = self.graph.as_ref();
        let n = g.len();
        Ok(LocalSystem {
            ids: g.ids().to_vec(),
            nbrs: (0..n).map(|i| g.adjacent(i).to_vec()).collect(),
            weights: (0..n).map(|i| self.normalization.weight(g.degree_of(i))).collect(),
            active: vec![true; n],
            theta: g.ids().iter().map(|&v| self.theta.theta(v)).collect::<Result<_>>()?,
        })
    }

    /// Synchronous Picard iteration from `a^(0) = 0`.
    pub fn picard_solve(&self, opts: &SolveOptions) -> Result<EquilibriumResult> {
        let init = ActionProfile::zeros(&self.space, self.graph.ids().iter().copied());
        self.picard_solve_from(&init, opts)
    }

    /// Picard iteration from an arbitrary admissible start.
    pub fn picard_solve_from(&self, init: &ActionProfile, opts: &SolveOptions) -> Result<EquilibriumResult> {
        let sys = self.global_system()?;
        let start = sys
            .ids
            .iter()
            .map(|&v| init.require(v).cloned())
            .collect::<Result<Vec<_>>>()?;
        let out = sys.solve(self, start, opts)?;
        self.result(&sys.ids, out, |_| true)
    }

    /// `z_v(a)` for every vertex.
    pub fn aggregates(&self, a: &ActionProfile) -> Result<Vec<ActionProcess>> {
        let g = self.graph.as_ref();
        let vals = g.ids().iter().map(|&v| a.require(v).cloned()).collect::<Result<Vec<_>>>()?;
        let sys = LocalSystem {
            ids: g.ids().to_vec(),
            nbrs: (0..g.len()).map(|i| g.adjacent(i).to_vec()).collect(),
            weights: (0..g.len()).map(|i| self.normalization.weight(g.degree_of(i))).collect(),
            active: vec![true; g.len()],
            theta: Vec::new(),
        };
        Ok((0..g.len()).map(|i| sys.aggregate(i, &vals, &self.space)).collect())
    }

    /// `U(BR(z_v, theta_v), z_v, theta_v) - U(a_v, z_v, theta_v)` per vertex.
    pub fn exploitability(&self, a: &ActionProfile) -> Result<Exploitability> {
        let z = self.aggregates(a)?;
        let ids = self.graph.ids();
        let gaps = ids
            .par_iter()
            .enumerate()
            .map(|(i, &v)| {
                let th = self.theta.theta(v)?;
                let br = self.utility.best_response(&z[i], &th, &self.admissible)?;
                let gap = self.utility.evaluate(&br, &z[i], &th)? - self.utility.evaluate(a.require(v)?, &z[i], &th)?;
                Ok((v, gap.max(0.0)))
            })
            .collect::<Result<Vec<_>>>()?;
        let max = gaps.iter().fold(0.0f64, |m, &(_, g)| m.max(g));
        Ok(Exploitability {
            gaps: gaps.into_iter().collect(),
            max,
        })
    }

    /// Each player plays its root action from the radius-`k` truncated game.
    pub fn build_eps_nash(&self, k: usize, opts: &SolveOptions) -> Result<EpsNash> {
        let ids = self.graph.ids();
        let theta_max = self.theta_max(ids.iter().copied())?;
        let (l_a, l_z) = self.payoff_lipschitz(theta_max)?;
        let actions = ids
            .par_iter()
            .map(|&v| Ok((v, self.truncated_local_solve(v, k, opts)?.root_action().clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut profile = ActionProfile::new(&self.space);
        for (v, a) in actions {
            profile.insert(v, a)?;
        }
        let eps = 2.0 * self.rho.powi(k as i32) * self.radius() * (l_a + 2.0 * l_z);
        Ok(EpsNash { profile, k, eps, l_a, l_z })
    }
}
