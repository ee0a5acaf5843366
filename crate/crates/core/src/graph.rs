//! Locally finite graphs: explicit finite graphs, lazily generated infinite
//! families, balls, boundaries and graph distances.
//!
//! Every neighbor list is returned in ascending [`VertexId`] order, so breadth
//! first searches (and everything built on them) are deterministic.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of vertices a ball extraction may visit.
pub const BALL_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId(pub i64);

impl VertexId {
    /// Encodes a point of the integer lattice.
    pub fn lattice(x: i32, y: i32) -> Self {
        VertexId(((x as i64) << 32) | (y as u32 as i64))
    }

    pub fn lattice_coords(self) -> (i32, i32) {
        ((self.0 >> 32) as i32, self.0 as i32)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Neighbor-oracle view shared by finite and lazily generated graphs.
pub trait Graph: Send + Sync {
    /// Neighbors of `v`, sorted ascending.
    fn neighbors(&self, v: VertexId) -> Result<Vec<VertexId>>;

    fn contains(&self, v: VertexId) -> bool;

    fn degree(&self, v: VertexId) -> Result<usize> {
        Ok(self.neighbors(v)?.len())
    }
}

/// A finite simple undirected graph with an optional root.
///
/// Vertices carry external ids; internally they are addressed by a dense
/// index `0..len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGraph {
    ids: Vec<VertexId>,
    index: HashMap<VertexId, usize>,
    adj: Vec<Vec<usize>>,
    root: Option<usize>,
}

impl FiniteGraph {
    /// Graph on ids `0..n` from an edge list of dense indices.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let ids = (0..n as i64).map(VertexId).collect();
        Self::from_indexed_edges(ids, edges)
    }

    /// Graph on the given ids; `edges` refer to positions in `ids`.
    pub fn from_indexed_edges(ids: Vec<VertexId>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = ids.len();
        let mut index = HashMap::with_capacity(n);
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate vertex id {id}")));
            }
        }
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) out of range for {n} vertices"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self loop at vertex {}", ids[u])));
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Ok(FiniteGraph {
            ids,
            index,
            adj,
            root: None,
        })
    }

    /// Reads a whitespace separated `u v` edge list (0-indexed). Blank lines
    /// and lines starting with `#` are skipped. The vertex count is one more
    /// than the largest index seen unless `min_vertices` is larger.
    pub fn from_edge_list_file(path: &Path, min_vertices: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_edge_list(&text, min_vertices)
    }

    pub fn parse_edge_list(text: &str, min_vertices: usize) -> Result<Self> {
        let mut edges = Vec::new();
        let mut n = min_vertices;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
                    Error::InvalidGraph(format!("line {}: expected `u v`", lineno + 1))
                })
            };
            let u = parse(parts.next())?;
            let v = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::InvalidGraph(format!(
                    "line {}: trailing tokens",
                    lineno + 1
                )));
            }
            n = n.max(u + 1).max(v + 1);
            edges.push((u, v));
        }
        Self::from_edges(n, &edges)
    }

    pub fn with_root(mut self, root: VertexId) -> Result<Self> {
        let idx = self.index_of(root)?;
        self.root = Some(idx);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[VertexId] {
        &self.ids
    }

    pub fn id(&self, idx: usize) -> VertexId {
        self.ids[idx]
    }

    pub fn index_of(&self, v: VertexId) -> Result<usize> {
        self.index.get(&v).copied().ok_or(Error::UnknownVertex(v))
    }

    pub fn try_index(&self, v: VertexId) -> Option<usize> {
        self.index.get(&v).copied()
    }

    pub fn adjacent(&self, idx: usize) -> &[usize] {
        &self.adj[idx]
    }

    pub fn degree_of(&self, idx: usize) -> usize {
        self.adj[idx].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn max_degree(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    /// Edges as dense index pairs `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (u, list) in self.adj.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    /// BFS distances (in dense indices) from `src`; `usize::MAX` if unreachable.
    pub fn distances_from(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.len()];
        let mut queue = VecDeque::new();
        dist[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &w in &self.adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.distances_from(0).iter().all(|&d| d != usize::MAX)
    }

    /// Largest distance from `idx` to a reachable vertex.
    pub fn eccentricity(&self, idx: usize) -> usize {
        self.distances_from(idx)
            .into_iter()
            .filter(|&d| d != usize::MAX)
            .max()
            .unwrap_or(0)
    }

    pub fn diameter(&self) -> usize {
        (0..self.len()).map(|i| self.eccentricity(i)).max().unwrap_or(0)
    }
}

impl Graph for FiniteGraph {
    fn neighbors(&self, v: VertexId) -> Result<Vec<VertexId>> {
        let idx = self.index_of(v)?;
        let mut out: Vec<VertexId> = self.adj[idx].iter().map(|&i| self.ids[i]).collect();
        out.sort_unstable();
        Ok(out)
    }

    fn contains(&self, v: VertexId) -> bool {
        self.index.contains_key(&v)
    }

    fn degree(&self, v: VertexId) -> Result<usize> {
        Ok(self.adj[self.index_of(v)?].len())
    }
}

/// Canonical generators exposed through a neighbor oracle only.
///
/// Vertex encodings: line and path/cycle use the integer itself, the lattice
/// uses [`VertexId::lattice`], the torus uses `y * width + x`, and the
/// `d`-regular tree numbers vertices in breadth-first order from root `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LazyGraph {
    Line,
    Lattice2d,
    Tree { degree: usize },
    Cycle { n: usize },
    Path { n: usize },
    Torus { width: usize, height: usize },
}

impl LazyGraph {
    pub fn degree_bound(&self) -> usize {
        match *self {
            LazyGraph::Line | LazyGraph::Path { .. } | LazyGraph::Cycle { .. } => 2,
            LazyGraph::Lattice2d | LazyGraph::Torus { .. } => 4,
            LazyGraph::Tree { degree } => degree,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(
            self,
            LazyGraph::Cycle { .. } | LazyGraph::Path { .. } | LazyGraph::Torus { .. }
        )
    }

    /// Canonical root: `0` for every generator (the origin for the lattice).
    pub fn origin(&self) -> VertexId {
        match self {
            LazyGraph::Lattice2d => VertexId::lattice(0, 0),
            _ => VertexId(0),
        }
    }

    /// Materializes a finite generator.
    pub fn to_finite(&self) -> Result<FiniteGraph> {
        match *self {
            LazyGraph::Cycle { n } => cycle(n),
            LazyGraph::Path { n } => path(n),
            LazyGraph::Torus { width, height } => torus(width, height),
            _ => Err(Error::InvalidGraph(format!("{self:?} is infinite"))),
        }
    }

    fn tree_children(degree: usize, v: i64) -> Result<Vec<i64>> {
        let d = degree as i64;
        let (first, count) = if v == 0 {
            (1, d)
        } else {
            let base = (v - 1)
                .checked_mul(d - 1)
                .and_then(|x| x.checked_add(d + 1))
                .ok_or_else(|| Error::InvalidGraph("tree vertex id overflow".into()))?;
            (base, d - 1)
        };
        Ok((first..first + count).collect())
    }

    fn tree_parent(degree: usize, v: i64) -> Option<i64> {
        let d = degree as i64;
        match v {
            0 => None,
            v if v <= d => Some(0),
            v => Some((v - d - 1) / (d - 1) + 1),
        }
    }
}

impl Graph for LazyGraph {
    fn neighbors(&self, v: VertexId) -> Result<Vec<VertexId>> {
        if !self.contains(v) {
            return Err(Error::UnknownVertex(v));
        }
        let mut out: Vec<VertexId> = match *self {
            LazyGraph::Line => vec![VertexId(v.0 - 1), VertexId(v.0 + 1)],
            LazyGraph::Lattice2d => {
                let (x, y) = v.lattice_coords();
                vec![
                    VertexId::lattice(x - 1, y),
                    VertexId::lattice(x + 1, y),
                    VertexId::lattice(x, y - 1),
                    VertexId::lattice(x, y + 1),
                ]
            }
            LazyGraph::Tree { degree } => {
                let mut out: Vec<VertexId> = Self::tree_children(degree, v.0)?
                    .into_iter()
                    .map(VertexId)
                    .collect();
                if let Some(p) = Self::tree_parent(degree, v.0) {
                    out.push(VertexId(p));
                }
                out
            }
            LazyGraph::Cycle { n } => {
                let n = n as i64;
                vec![VertexId((v.0 + n - 1) % n), VertexId((v.0 + 1) % n)]
            }
            LazyGraph::Path { n } => {
                let mut out = Vec::with_capacity(2);
                if v.0 > 0 {
                    out.push(VertexId(v.0 - 1));
                }
                if v.0 + 1 < n as i64 {
                    out.push(VertexId(v.0 + 1));
                }
                out
            }
            LazyGraph::Torus { width, height } => {
                let (w, h) = (width as i64, height as i64);
                let (x, y) = (v.0 % w, v.0 / w);
                let at = |x: i64, y: i64| VertexId(y.rem_euclid(h) * w + x.rem_euclid(w));
                vec![at(x - 1, y), at(x + 1, y), at(x, y - 1), at(x, y + 1)]
            }
        };
        out.sort_unstable();
        out.dedup();
        out.retain(|&u| u != v);
        Ok(out)
    }

    fn contains(&self, v: VertexId) -> bool {
        match *self {
            LazyGraph::Line | LazyGraph::Lattice2d => true,
            LazyGraph::Tree { .. } => v.0 >= 0,
            LazyGraph::Cycle { n } | LazyGraph::Path { n } => (0..n as i64).contains(&v.0),
            LazyGraph::Torus { width, height } => (0..(width * height) as i64).contains(&v.0),
        }
    }
}

pub fn cycle(n: usize) -> Result<FiniteGraph> {
    if n < 3 {
        return Err(Error::InvalidGraph(format!("cycle needs n >= 3, got {n}")));
    }
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    FiniteGraph::from_edges(n, &edges)
}

pub fn path(n: usize) -> Result<FiniteGraph> {
    if n == 0 {
        return Err(Error::InvalidGraph("path needs n >= 1".into()));
    }
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    FiniteGraph::from_edges(n, &edges)
}

pub fn complete(n: usize) -> Result<FiniteGraph> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            edges.push((u, v));
        }
    }
    FiniteGraph::from_edges(n, &edges)
}

pub fn torus(width: usize, height: usize) -> Result<FiniteGraph> {
    if width < 3 || height < 3 {
        return Err(Error::InvalidGraph(format!(
            "torus needs both sides >= 3, got {width}x{height}"
        )));
    }
    let mut edges = Vec::with_capacity(2 * width * height);
    for y in 0..height {
        for x in 0..width {
            let v = y * width + x;
            edges.push((v, y * width + (x + 1) % width));
            edges.push((v, ((y + 1) % height) * width + x));
        }
    }
    FiniteGraph::from_edges(width * height, &edges)
}

/// A ball `B_k(G, v)` extracted from any graph, rooted at `v`.
///
/// Dense indices follow BFS discovery order, so the root has index `0`.
#[derive(Debug, Clone)]
pub struct Ball {
    pub graph: FiniteGraph,
    pub radius: usize,
    /// Distance of each vertex (dense index) from the root.
    pub dist: Vec<usize>,
    /// Degree of each vertex in the ambient graph.
    pub ambient_degree: Vec<usize>,
}

impl Ball {
    pub fn root_id(&self) -> VertexId {
        self.graph.id(0)
    }

    /// Vertices whose ambient degree exceeds their degree inside the ball.
    pub fn is_boundary(&self, idx: usize) -> bool {
        self.ambient_degree[idx] > self.graph.degree_of(idx)
    }
}

pub fn ball<G: Graph + ?Sized>(g: &G, v: VertexId, k: usize) -> Result<Ball> {
    ball_with_cap(g, v, k, BALL_CAP)
}

/// Induced subgraph on `{u : d(v, u) <= k}` with ties broken by ascending id.
pub fn ball_with_cap<G: Graph + ?Sized>(g: &G, v: VertexId, k: usize, cap: usize) -> Result<Ball> {
    if !g.contains(v) {
        return Err(Error::UnknownVertex(v));
    }
    let mut ids = vec![v];
    let mut dist = vec![0usize];
    let mut index: HashMap<VertexId, usize> = HashMap::from([(v, 0)]);
    let mut nbrs: Vec<Vec<VertexId>> = Vec::new();
    let mut head = 0;
    while head < ids.len() {
        let u = ids[head];
        let du = dist[head];
        let list = g.neighbors(u)?;
        if du < k {
            for &w in &list {
                if !index.contains_key(&w) {
                    if ids.len() >= cap {
                        return Err(Error::Capacity {
                            what: "ball",
                            size: ids.len() + 1,
                            cap,
                        });
                    }
                    index.insert(w, ids.len());
                    ids.push(w);
                    dist.push(du + 1);
                }
            }
        }
        nbrs.push(list);
        head += 1;
    }
    let ambient_degree = nbrs.iter().map(Vec::len).collect();
    let mut edges = Vec::new();
    for (i, list) in nbrs.iter().enumerate() {
        for w in list {
            if let Some(&j) = index.get(w) {
                if i < j {
                    edges.push((i, j));
                }
            }
        }
    }
    let graph = FiniteGraph::from_indexed_edges(ids, &edges)?.with_root(v)?;
    Ok(Ball {
        graph,
        radius: k,
        dist,
        ambient_degree,
    })
}

/// A vertex subset of a parent graph.
#[derive(Debug, Clone)]
pub struct SubgraphView<'g, G: Graph + ?Sized> {
    pub parent: &'g G,
    pub vertices: BTreeSet<VertexId>,
    pub induced: bool,
}

impl<'g, G: Graph + ?Sized> SubgraphView<'g, G> {
    pub fn induced<I: IntoIterator<Item = VertexId>>(parent: &'g G, vertices: I) -> Result<Self> {
        let vertices: BTreeSet<VertexId> = vertices.into_iter().collect();
        if let Some(&bad) = vertices.iter().find(|&&v| !parent.contains(v)) {
            return Err(Error::UnknownVertex(bad));
        }
        Ok(SubgraphView {
            parent,
            vertices,
            induced: true,
        })
    }

    pub fn from_ball(parent: &'g G, b: &Ball) -> Result<Self> {
        Self::induced(parent, b.graph.ids().iter().copied())
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.vertices.contains(&v)
    }

    /// Boundary `{u in H : some neighbor lies outside H}` and interior
    /// `H \ boundary`, both in ascending id order.
    pub fn boundary_interior(&self) -> Result<(Vec<VertexId>, Vec<VertexId>)> {
        if !self.induced {
            return Err(Error::InvalidGraph(
                "boundary and interior need an induced subgraph".into(),
            ));
        }
        let mut boundary = Vec::new();
        let mut interior = Vec::new();
        for &u in &self.vertices {
            if self.parent.neighbors(u)?.iter().any(|w| !self.vertices.contains(w)) {
                boundary.push(u);
            } else {
                interior.push(u);
            }
        }
        Ok((boundary, interior))
    }
}

/// Distance between two vertex sets and the matching locality radius
/// `k = ceil(d / 2)`; `None` means the sets are disconnected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubgraphDistance {
    pub distance: Option<usize>,
    pub k: Option<usize>,
}

impl SubgraphDistance {
    pub fn from_distance(distance: Option<usize>) -> Self {
        SubgraphDistance {
            distance,
            k: distance.map(|d| d.div_ceil(2)),
        }
    }
}

/// Multi-source BFS distance from `h1` to `h2`. Exploration is capped at
/// [`BALL_CAP`] vertices.
pub fn subgraph_distance<G: Graph + ?Sized>(
    g: &G,
    h1: &BTreeSet<VertexId>,
    h2: &BTreeSet<VertexId>,
) -> Result<SubgraphDistance> {
    if h1.is_empty() || h2.is_empty() {
        return Err(Error::InvalidGraph("subgraphs must be nonempty".into()));
    }
    if h1.iter().any(|v| h2.contains(v)) {
        return Ok(SubgraphDistance::from_distance(Some(0)));
    }
    let mut seen: HashMap<VertexId, usize> = h1.iter().map(|&v| (v, 0)).collect();
    let mut queue: VecDeque<VertexId> = h1.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        let du = seen[&u];
        for w in g.neighbors(u)? {
            if seen.contains_key(&w) {
                continue;
            }
            if h2.contains(&w) {
                return Ok(SubgraphDistance::from_distance(Some(du + 1)));
            }
            if seen.len() >= BALL_CAP {
                return Err(Error::Capacity {
                    what: "distance search",
                    size: seen.len(),
                    cap: BALL_CAP,
                });
            }
            seen.insert(w, du + 1);
            queue.push_back(w);
        }
    }
    Ok(SubgraphDistance::from_distance(None))
}

/// How neighbor sums are normalized in the local aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the vertex degree (`0/0 := 0`).
    #[default]
    Degree,
    /// Divide by a uniform degree bound `D`.
    Uniform { bound: usize },
}

impl Normalization {
    /// Weight `1/deg` (or `1/D`) applied to the neighbor sum of a vertex.
    pub fn weight(&self, degree: usize) -> f64 {
        match *self {
            Normalization::Degree if degree == 0 => 0.0,
            Normalization::Degree => 1.0 / degree as f64,
            Normalization::Uniform { bound } => 1.0 / bound as f64,
        }
    }
}
