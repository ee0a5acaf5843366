//! Discrete-time action spaces: finite scenario spaces with a filtration,
//! adapted processes, the `E[sum_j a(t_j) b(t_j)]` inner product and
//! projections onto admissible sets.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::VertexId;

/// Tolerance on the total probability mass.
pub const MASS_TOL: f64 = 1e-12;

/// Finite probability space with a time grid and one partition of the atoms
/// per grid point. Partition `j + 1` refines partition `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpace {
    probs: Vec<f64>,
    times: Vec<f64>,
    /// `blocks[j][s]` is the block label of atom `s` at time `t_j`; labels are
    /// canonical (numbered by first occurrence).
    blocks: Vec<Vec<usize>>,
    block_count: Vec<usize>,
}

/// Named filtrations for the common cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Filtration {
    Named(NamedFiltration),
    /// One block label list per time point.
    Explicit(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedFiltration {
    /// Nothing is revealed: adapted processes are deterministic.
    Trivial,
    /// Every atom is distinguishable from time `t_0` on.
    RevealAtStart,
}

impl ScenarioSpace {
    pub fn new(probs: Vec<f64>, times: Vec<f64>, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let s = probs.len();
        if s == 0 {
            return Err(Error::InvalidSpace("no atoms".into()));
        }
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidSpace("atom probabilities must be positive".into()));
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidSpace(format!("probabilities sum to {mass}")));
        }
        if times.is_empty() {
            return Err(Error::InvalidSpace("empty time grid".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidSpace("time grid must be strictly increasing".into()));
        }
        if blocks.len() != times.len() {
            return Err(Error::InvalidSpace(format!(
                "{} partitions for {} time points",
                blocks.len(),
                times.len()
            )));
        }
        let mut canon = Vec::with_capacity(blocks.len());
        let mut block_count = Vec::with_capacity(blocks.len());
        for (j, labels) in blocks.iter().enumerate() {
            if labels.len() != s {
                return Err(Error::InvalidSpace(format!(
                    "partition {j} labels {} atoms, expected {s}",
                    labels.len()
                )));
            }
            let mut map = BTreeMap::new();
            let relabeled: Vec<usize> = labels
                .iter()
                .map(|l| {
                    let next = map.len();
                    *map.entry(*l).or_insert(next)
                })
                .collect();
            block_count.push(map.len());
            canon.push(relabeled);
        }
        for j in 1..canon.len() {
            // refinement: same block at j implies same block at j - 1
            let mut parent = vec![usize::MAX; block_count[j]];
            for atom in 0..s {
                let b = canon[j][atom];
                let prev = canon[j - 1][atom];
                if parent[b] == usize::MAX {
                    parent[b] = prev;
                } else if parent[b] != prev {
                    return Err(Error::InvalidSpace(format!(
                        "partition {j} does not refine partition {}",
                        j - 1
                    )));
                }
            }
        }
        Ok(ScenarioSpace {
            probs,
            times,
            blocks: canon,
            block_count,
        })
    }

    /// One atom, one time point: the static deterministic game.
    pub fn single() -> Self {
        Self::deterministic(vec![0.0]).expect("valid")
    }

    pub fn deterministic(times: Vec<f64>) -> Result<Self> {
        let n = times.len();
        Self::new(vec![1.0], times, vec![vec![0]; n])
    }

    /// `atoms` equally likely atoms with a named filtration.
    pub fn uniform(atoms: usize, times: Vec<f64>, filtration: NamedFiltration) -> Result<Self> {
        if atoms == 0 {
            return Err(Error::InvalidSpace("no atoms".into()));
        }
        let p = 1.0 / atoms as f64;
        let mut probs = vec![p; atoms];
        // absorb roundoff so the mass check is exact
        let rest: f64 = probs[1..].iter().sum();
        probs[0] = 1.0 - rest;
        let labels: Vec<usize> = match filtration {
            NamedFiltration::Trivial => vec![0; atoms],
            NamedFiltration::RevealAtStart => (0..atoms).collect(),
        };
        let n = times.len();
        Self::new(probs, times, vec![labels; n])
    }

    /// `2^bits` equally likely atoms, revealed at the start; atom `s` encodes
    /// the sign pattern given by its binary digits.
    pub fn exhaustive_signs(bits: usize, times: Vec<f64>) -> Result<Self> {
        if bits > 24 {
            return Err(Error::Capacity {
                what: "exhaustive sign space",
                size: 1usize << bits.min(62),
                cap: 1 << 24,
            });
        }
        Self::uniform(1 << bits, times, NamedFiltration::RevealAtStart)
    }

    pub fn with_filtration(atoms: usize, times: Vec<f64>, f: &Filtration) -> Result<Self> {
        match f {
            Filtration::Named(named) => Self::uniform(atoms, times, *named),
            Filtration::Explicit(blocks) => {
                let p = 1.0 / atoms as f64;
                let mut probs = vec![p; atoms];
                let rest: f64 = probs[1..].iter().sum();
                probs[0] = 1.0 - rest;
                Self::new(probs, times, blocks.clone())
            }
        }
    }

    pub fn atoms(&self) -> usize {
        self.probs.len()
    }

    /// Number of time points `N + 1`.
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn len(&self) -> usize {
        self.atoms() * self.steps()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn block_of(&self, atom: usize, step: usize) -> usize {
        self.blocks[step][atom]
    }

    pub fn block_count(&self, step: usize) -> usize {
        self.block_count[step]
    }

    pub fn blocks(&self, step: usize) -> &[usize] {
        &self.blocks[step]
    }

    /// Orthogonal projection onto adapted processes: blockwise conditional
    /// expectation at every time point.
    pub fn adapt(&self, values: &mut [f64]) {
        let steps = self.steps();
        for j in 0..steps {
            let nb = self.block_count[j];
            if nb == self.atoms() {
                continue;
            }
            let mut mass = vec![0.0; nb];
            let mut sum = vec![0.0; nb];
            for (s, &p) in self.probs.iter().enumerate() {
                let b = self.blocks[j][s];
                mass[b] += p;
                sum[b] += p * values[s * steps + j];
            }
            for s in 0..self.atoms() {
                let b = self.blocks[j][s];
                values[s * steps + j] = sum[b] / mass[b];
            }
        }
    }
}

/// An adapted real process on a [`ScenarioSpace`], stored row-major as
/// `values[s * steps + j]`.
#[derive(Debug, Clone)]
pub struct ActionProcess {
    space: Arc<ScenarioSpace>,
    values: Vec<f64>,
}

impl PartialEq for ActionProcess {
    fn eq(&self, other: &Self) -> bool {
        same_space(&self.space, &other.space) && self.values == other.values
    }
}

pub(crate) fn same_space(a: &Arc<ScenarioSpace>, b: &Arc<ScenarioSpace>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl ActionProcess {
    pub fn zeros(space: &Arc<ScenarioSpace>) -> Self {
        Self::constant(space, 0.0)
    }

    pub fn constant(space: &Arc<ScenarioSpace>, c: f64) -> Self {
        ActionProcess {
            space: Arc::clone(space),
            values: vec![c; space.len()],
        }
    }

    pub fn from_fn(space: &Arc<ScenarioSpace>, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let steps = space.steps();
        let values = (0..space.len()).map(|i| f(i / steps, i % steps)).collect();
        ActionProcess {
            space: Arc::clone(space),
            values,
        }
    }

    /// Checked constructor: length and finiteness. Adaptedness is not
    /// enforced here; see [`ActionProcess::is_adapted`].
    pub fn from_values(space: &Arc<ScenarioSpace>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::InvalidProcess(format!(
                "{} values for a {}x{} space",
                values.len(),
                space.atoms(),
                space.steps()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProcess("non-finite entry".into()));
        }
        Ok(ActionProcess {
            space: Arc::clone(space),
            values,
        })
    }

    pub(crate) fn from_raw(space: &Arc<ScenarioSpace>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), space.len());
        ActionProcess {
            space: Arc::clone(space),
            values,
        }
    }

    pub fn space(&self) -> &Arc<ScenarioSpace> {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, atom: usize, step: usize) -> f64 {
        self.values[atom * self.space.steps() + step]
    }

    /// Trajectory of atom `s`.
    pub fn path(&self, atom: usize) -> &[f64] {
        let steps = self.space.steps();
        &self.values[atom * steps..(atom + 1) * steps]
    }

    fn check(&self, other: &ActionProcess) -> Result<()> {
        if same_space(&self.space, &other.space) {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }

    pub fn inner(&self, other: &ActionProcess) -> Result<f64> {
        self.check(other)?;
        Ok(weighted_inner(&self.space, &self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        weighted_inner(&self.space, &self.values, &self.values).sqrt()
    }

    /// `||self - other||` in the action-space norm.
    pub fn distance(&self, other: &ActionProcess) -> Result<f64> {
        self.check(other)?;
        Ok(weighted_distance(&self.space, &self.values, &other.values))
    }

    pub fn add_scaled(&mut self, c: f64, other: &ActionProcess) -> Result<()> {
        self.check(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += c * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|x| *x *= c);
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.scale(c);
        self
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &ActionProcess, b: f64) -> Result<ActionProcess> {
        self.check(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(ActionProcess::from_raw(&self.space, values))
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Probability-weighted time average `E[(1/(N+1)) sum_j a(t_j)]`.
    pub fn mean(&self) -> f64 {
        let steps = self.space.steps();
        self.space
            .probs()
            .iter()
            .enumerate()
            .map(|(s, p)| p * self.path(s).iter().sum::<f64>())
            .sum::<f64>()
            / steps as f64
    }

    /// True iff every time slice is constant on the blocks of its partition,
    /// up to `tol` in absolute value.
    pub fn is_adapted(&self, tol: f64) -> bool {
        let steps = self.space.steps();
        for j in 0..steps {
            let nb = self.space.block_count(j);
            if nb == self.space.atoms() {
                continue;
            }
            let mut first = vec![f64::NAN; nb];
            for s in 0..self.space.atoms() {
                let b = self.space.block_of(s, j);
                let v = self.values[s * steps + j];
                if first[b].is_nan() {
                    first[b] = v;
                } else if (first[b] - v).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Orthogonal projection onto the adapted subspace.
    pub fn adapted(mut self) -> Self {
        let space = Arc::clone(&self.space);
        space.adapt(&mut self.values);
        self
    }
}

pub(crate) fn weighted_inner(space: &ScenarioSpace, a: &[f64], b: &[f64]) -> f64 {
    let steps = space.steps();
    space
        .probs()
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let r = s * steps..(s + 1) * steps;
            p * a[r.clone()].iter().zip(&b[r]).map(|(x, y)| x * y).sum::<f64>()
        })
        .sum()
}

pub(crate) fn weighted_distance(space: &ScenarioSpace, a: &[f64], b: &[f64]) -> f64 {
    let steps = space.steps();
    space
        .probs()
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let r = s * steps..(s + 1) * steps;
            p * a[r.clone()]
                .iter()
                .zip(&b[r])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Convex closed admissible set shared by all players.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdmissibleSet {
    /// `{a : ||a|| <= radius}`.
    Ball { radius: f64 },
    /// `{a : lo <= a(s, t_j) <= hi}` entrywise.
    Box { lo: f64, hi: f64 },
}

impl AdmissibleSet {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AdmissibleSet::Ball { radius } if radius > 0.0 && radius.is_finite() => Ok(()),
            AdmissibleSet::Ball { radius } => Err(Error::config(
                "admissible.radius",
                format!("radius must be positive and finite, got {radius}"),
            )),
            AdmissibleSet::Box { lo, hi } if lo <= hi && lo.is_finite() && hi.is_finite() => {
                Ok(())
            }
            AdmissibleSet::Box { lo, hi } => Err(Error::config(
                "admissible",
                format!("empty or unbounded box [{lo}, {hi}]"),
            )),
        }
    }

    /// A radius `M` with the set contained in the `M`-ball of the space.
    pub fn radius_bound(&self, space: &ScenarioSpace) -> f64 {
        match *self {
            AdmissibleSet::Ball { radius } => radius,
            AdmissibleSet::Box { lo, hi } => lo.abs().max(hi.abs()) * (space.steps() as f64).sqrt(),
        }
    }

    pub fn project(&self, x: &ActionProcess) -> ActionProcess {
        let mut out = x.clone();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, x: &mut ActionProcess) {
        match *self {
            AdmissibleSet::Ball { radius } => {
                let n = x.norm();
                if n > radius {
                    x.scale(radius / n);
                }
            }
            AdmissibleSet::Box { lo, hi } => {
                x.values_mut().iter_mut().for_each(|v| *v = v.clamp(lo, hi));
            }
        }
    }

    pub fn contains(&self, x: &ActionProcess, tol: f64) -> bool {
        match *self {
            AdmissibleSet::Ball { radius } => x.norm() <= radius + tol,
            AdmissibleSet::Box { lo, hi } => {
                x.values().iter().all(|&v| v >= lo - tol && v <= hi + tol)
            }
        }
    }
}

/// Vertex-indexed family of processes on one shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionProfile {
    space: Arc<ScenarioSpace>,
    processes: BTreeMap<VertexId, ActionProcess>,
}

/// Heterogeneity profiles have the same shape as action profiles.
pub type HeterogeneityProfile = ActionProfile;

impl ActionProfile {
    pub fn new(space: &Arc<ScenarioSpace>) -> Self {
        ActionProfile {
            space: Arc::clone(space),
            processes: BTreeMap::new(),
        }
    }

    pub fn zeros<I: IntoIterator<Item = VertexId>>(space: &Arc<ScenarioSpace>, ids: I) -> Self {
        let mut p = Self::new(space);
        for v in ids {
            p.processes.insert(v, ActionProcess::zeros(space));
        }
        p
    }

    pub fn space(&self) -> &Arc<ScenarioSpace> {
        &self.space
    }

    pub fn insert(&mut self, v: VertexId, a: ActionProcess) -> Result<()> {
        if !same_space(&self.space, a.space()) {
            return Err(Error::SpaceMismatch);
        }
        self.processes.insert(v, a);
        Ok(())
    }

    pub fn get(&self, v: VertexId) -> Option<&ActionProcess> {
        self.processes.get(&v)
    }

    pub fn require(&self, v: VertexId) -> Result<&ActionProcess> {
        self.processes.get(&v).ok_or(Error::IncompleteProfile(v))
    }

    pub fn len(&self) -> usize {
        self.processes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.processes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VertexId, &ActionProcess)> {
        self.processes.iter()
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.processes.keys().copied()
    }

    /// `sup_v ||a_v||`.
    pub fn sup_norm(&self) -> f64 {
        self.processes.values().fold(0.0, |m, a| m.max(a.norm()))
    }

    /// `sup_v ||a_v - b_v||` over the vertices of `self`.
    pub fn sup_distance(&self, other: &ActionProfile) -> Result<f64> {
        let mut m: f64 = 0.0;
        for (v, a) in &self.processes {
            m = m.max(a.distance(other.require(*v)?)?);
        }
        Ok(m)
    }

    pub fn restrict<I: IntoIterator<Item = VertexId>>(&self, ids: I) -> Result<ActionProfile> {
        let mut out = ActionProfile::new(&self.space);
        for v in ids {
            out.processes.insert(v, self.require(v)?.clone());
        }
        Ok(out)
    }
}
