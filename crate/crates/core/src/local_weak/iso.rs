//! Root-preserving isomorphism search between small rooted graphs.

use crate::error::{Error, Result};
use crate::graph::FiniteGraph;

/// Largest ball handled by the backtracking search.
pub const ISO_CAP: usize = 200;

struct Prepared<'a> {
    g: &'a FiniteGraph,
    dist: Vec<usize>,
    order: Vec<usize>,
}

fn prepare(g: &FiniteGraph) -> Result<Prepared<'_>> {
    if g.len() > ISO_CAP {
        return Err(Error::Capacity {
            what: "rooted ball",
            size: g.len(),
            cap: ISO_CAP,
        });
    }
    let root = g
        .root()
        .ok_or_else(|| Error::InvalidGraph("isomorphism search needs rooted graphs".into()))?;
    let dist = g.distances_from(root);
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by_key(|&i| (dist[i], std::cmp::Reverse(g.degree_of(i)), i));
    Ok(Prepared { g, dist, order })
}

fn signature(p: &Prepared<'_>) -> Vec<(usize, usize)> {
    let mut s: Vec<(usize, usize)> = (0..p.g.len()).map(|i| (p.dist[i], p.g.degree_of(i))).collect();
    s.sort_unstable();
    s
}

struct Search<'a, F: FnMut(usize, usize) -> f64> {
    a: &'a Prepared<'a>,
    b: &'a Prepared<'a>,
    map: Vec<usize>,
    used: Vec<bool>,
    cost: F,
    best: f64,
    best_map: Option<Vec<usize>>,
    first_only: bool,
}

impl<F: FnMut(usize, usize) -> f64> Search<'_, F> {
    fn run(&mut self, depth: usize, current: f64) {
        if depth == self.a.order.len() {
            if current < self.best || self.best_map.is_none() {
                self.best = current;
                self.best_map = Some(self.map.clone());
            }
            return;
        }
        let v = self.a.order[depth];
        let (ga, gb) = (self.a.g, self.b.g);
        for w in 0..gb.len() {
            if self.used[w] || self.b.dist[w] != self.a.dist[v] || gb.degree_of(w) != ga.degree_of(v) {
                continue;
            }
            let consistent = self.a.order[..depth]
                .iter()
                .all(|&u| ga.has_edge(v, u) == gb.has_edge(w, self.map[u]));
            if !consistent {
                continue;
            }
            let c = current.max((self.cost)(v, w));
            if self.best_map.is_some() && c >= self.best {
                continue;
            }
            self.map[v] = w;
            self.used[w] = true;
            self.run(depth + 1, c);
            self.used[w] = false;
            self.map[v] = usize::MAX;
            if self.first_only && self.best_map.is_some() {
                return;
            }
        }
    }
}

/// `inf_phi max_v cost(v, phi(v))` over root-preserving isomorphisms
/// `phi: a -> b`, with a minimizing witness (`phi[v]` is the index in `b`).
/// `None` when the graphs are not isomorphic.
pub fn min_max_isomorphism(
    a: &FiniteGraph,
    b: &FiniteGraph,
    cost: impl FnMut(usize, usize) -> f64,
) -> Result<Option<(f64, Vec<usize>)>> {
    search(a, b, cost, false)
}

fn search(
    a: &FiniteGraph,
    b: &FiniteGraph,
    cost: impl FnMut(usize, usize) -> f64,
    first_only: bool,
) -> Result<Option<(f64, Vec<usize>)>> {
    let pa = prepare(a)?;
    let pb = prepare(b)?;
    if a.len() != b.len() || a.edge_count() != b.edge_count() || signature(&pa) != signature(&pb) {
        return Ok(None);
    }
    let mut s = Search {
        a: &pa,
        b: &pb,
        map: vec![usize::MAX; a.len()],
        used: vec![false; b.len()],
        cost,
        best: f64::INFINITY,
        best_map: None,
        first_only,
    };
    s.run(0, 0.0);
    Ok(s.best_map.map(|m| (s.best, m)))
}

/// Root-preserving isomorphism test with a witness bijection.
pub fn ball_isomorphic(a: &FiniteGraph, b: &FiniteGraph) -> Result<Option<Vec<usize>>> {
    Ok(search(a, b, |_, _| 0.0, true)?.map(|(_, m)| m))
}
