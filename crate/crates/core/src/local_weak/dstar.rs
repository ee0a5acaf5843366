//! Truncated local distance between marked rooted graphs.

use crate::error::Result;
use crate::graph::{ball, Graph, VertexId};
use crate::theta::ThetaSource;

use super::iso::{ball_isomorphic, min_max_isomorphism};

pub const DEFAULT_KMAX: usize = 8;

/// A rooted graph, optionally carrying a process-valued mark per vertex.
#[derive(Clone, Copy)]
pub struct MarkedRooted<'a> {
    pub graph: &'a dyn Graph,
    pub root: VertexId,
    pub marks: Option<&'a dyn ThetaSource>,
}

impl<'a> MarkedRooted<'a> {
    pub fn unmarked(graph: &'a dyn Graph, root: VertexId) -> Self {
        MarkedRooted { graph, root, marks: None }
    }

    pub fn marked(graph: &'a dyn Graph, root: VertexId, marks: &'a dyn ThetaSource) -> Self {
        MarkedRooted {
            graph,
            root,
            marks: Some(marks),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DStar {
    /// `sum_{k<=kmax} 2^-k t_k + 2^-kmax t_kmax`: the tail is filled with the
    /// last term, which is a lower bound for every later term.
    pub value: f64,
    /// The partial sum; the true distance lies in `[lower, lower + 2^-kmax]`.
    pub lower: f64,
    /// `t_k = 1 ∧ inf_phi max_v d(x_v, x'_phi(v))`, `k = 1..=kmax`.
    pub terms: Vec<f64>,
}

/// Term `t_k` for one radius. Unmarked graphs use the indicator of
/// non-isomorphic balls. Marks are compared in the process norm, so both
/// sides must live on the same scenario space.
pub fn dstar_term(g1: &MarkedRooted<'_>, g2: &MarkedRooted<'_>, k: usize) -> Result<f64> {
    let b1 = ball(g1.graph, g1.root, k)?;
    let b2 = ball(g2.graph, g2.root, k)?;
    match (g1.marks, g2.marks) {
        (Some(m1), Some(m2)) => {
            let x1 = b1.graph.ids().iter().map(|&v| m1.theta(v)).collect::<Result<Vec<_>>>()?;
            let x2 = b2.graph.ids().iter().map(|&v| m2.theta(v)).collect::<Result<Vec<_>>>()?;
            if let (Some(a), Some(b)) = (x1.first(), x2.first()) {
                a.distance(b)?;
            }
            let found = min_max_isomorphism(&b1.graph, &b2.graph, |v, w| {
                x1[v].distance(&x2[w]).expect("spaces checked above")
            })?;
            Ok(found.map_or(1.0, |(c, _)| c.min(1.0)))
        }
        _ => Ok(if ball_isomorphic(&b1.graph, &b2.graph)?.is_some() { 0.0 } else { 1.0 }),
    }
}

pub fn dstar_truncated(g1: &MarkedRooted<'_>, g2: &MarkedRooted<'_>, kmax: usize) -> Result<DStar> {
    let mut terms = Vec::with_capacity(kmax);
    let mut lower = 0.0;
    let mut weight = 1.0;
    for k in 1..=kmax {
        weight *= 0.5;
        let t = dstar_term(g1, g2, k)?;
        lower += weight * t;
        terms.push(t);
    }
    let tail = terms.last().map_or(0.0, |t| weight * t);
    Ok(DStar {
        value: lower + tail,
        lower,
        terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::graph::{cycle, path, torus, FiniteGraph, LazyGraph};
    use crate::process::{ActionProcess, ActionProfile, ScenarioSpace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn closed_forms() {
        let c3 = cycle(3).unwrap();
        let c4 = cycle(4).unwrap();
        let c6 = cycle(6).unwrap();
        let z = LazyGraph::Line;
        let d = dstar_truncated(&MarkedRooted::unmarked(&c3, VertexId(0)), &MarkedRooted::unmarked(&c4, VertexId(0)), 8).unwrap();
        assert_eq!(d.value, 1.0);
        let d = dstar_truncated(&MarkedRooted::unmarked(&c6, VertexId(0)), &MarkedRooted::unmarked(&z, VertexId(0)), 8).unwrap();
        assert_eq!(d.value, 0.25);
        let d = dstar_truncated(&MarkedRooted::unmarked(&c6, VertexId(2)), &MarkedRooted::unmarked(&c6, VertexId(5)), 8).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn cycles_against_the_line() {
        let z = LazyGraph::Line;
        for n in 3..=64usize {
            let c = cycle(n).unwrap();
            let d = dstar_truncated(&MarkedRooted::unmarked(&c, VertexId(0)), &MarkedRooted::unmarked(&z, VertexId(0)), 8).unwrap();
            // B_k(C_n) is a path exactly when 2k + 1 < n
            let kappa = (n - 2) / 2;
            let closed = 0.5f64.powi(kappa as i32);
            if kappa < 8 {
                assert_eq!(d.value, closed, "n={n}");
            } else {
                assert!((d.value - closed).abs() <= 0.5f64.powi(8));
            }
        }
    }

    #[test]
    fn root_mark_perturbation() {
        let sp = Arc::new(ScenarioSpace::single());
        let g = path(7).unwrap();
        let mut p1 = ActionProfile::new(&sp);
        for &v in g.ids() {
            p1.insert(v, ActionProcess::constant(&sp, v.0 as f64 * 0.3)).unwrap();
        }
        for delta in [0.0, 0.1, 0.37, 1.0] {
            let mut p2 = p1.clone();
            p2.insert(VertexId(3), ActionProcess::constant(&sp, 0.9 + delta)).unwrap();
            let d = dstar_truncated(&MarkedRooted::marked(&g, VertexId(3), &p1), &MarkedRooted::marked(&g, VertexId(3), &p2), 8).unwrap();
            assert!((d.value - delta).abs() < 1e-15, "delta={delta}: {}", d.value);
        }
    }

    #[test]
    fn cross_space_marks_rejected() {
        let g = path(3).unwrap();
        let s1 = Arc::new(ScenarioSpace::single());
        let s2 = Arc::new(ScenarioSpace::deterministic(vec![0.0, 1.0]).unwrap());
        let p1 = ActionProfile::zeros(&s1, g.ids().iter().copied());
        let p2 = ActionProfile::zeros(&s2, g.ids().iter().copied());
        let r = dstar_truncated(&MarkedRooted::marked(&g, VertexId(1), &p1), &MarkedRooted::marked(&g, VertexId(1), &p2), 3);
        assert!(matches!(r, Err(Error::SpaceMismatch)));
    }

    struct Sample {
        g: FiniteGraph,
        root: VertexId,
        marks: ActionProfile,
    }

    fn random_sample(rng: &mut ChaCha8Rng, sp: &Arc<ScenarioSpace>) -> Sample {
        let g = match rng.random_range(0..3) {
            0 => cycle(rng.random_range(3..10)).unwrap(),
            1 => path(rng.random_range(1..10)).unwrap(),
            _ => torus(3, rng.random_range(3..5)).unwrap(),
        };
        let root = g.id(rng.random_range(0..g.len()));
        let mut marks = ActionProfile::new(sp);
        for &v in g.ids() {
            marks.insert(v, ActionProcess::constant(sp, rng.random_range(-0.5..0.5))).unwrap();
        }
        Sample { g, root, marks }
    }

    #[test]
    fn pseudometric_on_random_triples() {
        let sp = Arc::new(ScenarioSpace::single());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let kmax = 4;
        let slack = 2.0 * 0.5f64.powi(kmax as i32);
        let d = |a: &Sample, b: &Sample| {
            dstar_truncated(&MarkedRooted::marked(&a.g, a.root, &a.marks), &MarkedRooted::marked(&b.g, b.root, &b.marks), kmax)
                .unwrap()
                .value
        };
        for _ in 0..200 {
            let x = random_sample(&mut rng, &sp);
            let y = random_sample(&mut rng, &sp);
            let z = random_sample(&mut rng, &sp);
            let (xy, yx, yz, xz) = (d(&x, &y), d(&y, &x), d(&y, &z), d(&x, &z));
            assert!((xy - yx).abs() < 1e-12);
            assert!(xz <= xy + yz + slack);
            assert_eq!(d(&x, &x), 0.0);
        }
    }
}
