//! Randomized invariants of graphs, solvers, covariance and the local distance.

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use sparse_nash::equilibrium::{Game, SolveOptions};
use sparse_nash::graph::{ball, FiniteGraph, Normalization, SubgraphView, VertexId};
use sparse_nash::local_weak::{dstar_truncated, MarkedRooted};
use sparse_nash::locality::{covariance_experiment, CovarianceMode, GameTemplate, TestFunction};
use sparse_nash::process::{ActionProcess, ActionProfile, AdmissibleSet, NamedFiltration, ScenarioSpace};
use sparse_nash::theta::{KeyedTheta, ThetaGenerator};
use sparse_nash::utility::QuadraticUtility;

fn graph_strategy(max_n: usize) -> impl Strategy<Value = FiniteGraph> {
    (2..=max_n).prop_flat_map(|n| {
        proptest::collection::vec((0..n, 0..n), 0..3 * n).prop_map(move |pairs| {
            let edges: BTreeSet<(usize, usize)> =
                pairs.into_iter().filter(|(a, b)| a != b).map(|(a, b)| (a.min(b), a.max(b))).collect();
            FiniteGraph::from_edges(n, &edges.into_iter().collect::<Vec<_>>()).unwrap()
        })
    })
}

fn space() -> Arc<ScenarioSpace> {
    Arc::new(ScenarioSpace::uniform(3, vec![0.0, 1.0], NamedFiltration::RevealAtStart).unwrap())
}

fn profile(sp: &Arc<ScenarioSpace>, g: &FiniteGraph, values: &[f64]) -> ActionProfile {
    let per = sp.len();
    let mut p = ActionProfile::new(sp);
    for (i, &v) in g.ids().iter().enumerate() {
        let vals = (0..per).map(|j| values[(i * per + j) % values.len()]).collect();
        p.insert(v, ActionProcess::from_values(sp, vals).unwrap().adapted()).unwrap();
    }
    p
}

fn game(g: FiniteGraph, ell: f64, seed: u64, admissible: AdmissibleSet) -> Game<FiniteGraph> {
    let sp = space();
    let theta = KeyedTheta::new(&sp, ThetaGenerator::IidGaussian { mean: 0.0, std: 1.0 }, seed).unwrap();
    Game::new(
        Arc::new(g),
        sp,
        Arc::new(theta),
        Arc::new(QuadraticUtility::new(1.0, ell, 1.0).unwrap()),
        admissible,
        Normalization::Degree,
    )
    .unwrap()
}

fn admissible() -> impl Strategy<Value = AdmissibleSet> {
    prop_oneof![
        (0.5f64..5.0).prop_map(|radius| AdmissibleSet::Ball { radius }),
        (0.5f64..3.0).prop_map(|m| AdmissibleSet::Box { lo: -m, hi: m }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregate_is_nonexpansive(
        g in graph_strategy(10),
        a in proptest::collection::vec(-5.0f64..5.0, 60),
        b in proptest::collection::vec(-5.0f64..5.0, 60),
    ) {
        let gm = game(g.clone(), 0.5, 1, AdmissibleSet::Ball { radius: 10.0 });
        let (pa, pb) = (profile(&gm.space, &g, &a), profile(&gm.space, &g, &b));
        let (za, zb) = (gm.aggregates(&pa).unwrap(), gm.aggregates(&pb).unwrap());
        let dz = za.iter().zip(&zb).map(|(x, y)| x.distance(y).unwrap()).fold(0.0, f64::max);
        prop_assert!(dz <= pa.sup_distance(&pb).unwrap() + 1e-12);
        prop_assert!(za.iter().all(|z| z.is_adapted(1e-12)));
    }

    #[test]
    fn balls_nest_and_boundaries_partition(g in graph_strategy(12), root in 0usize..12, k in 0usize..4) {
        let v = g.id(root % g.len());
        let b0 = ball(&g, v, k).unwrap();
        let b1 = ball(&g, v, k + 1).unwrap();
        let ids1: BTreeSet<VertexId> = b1.graph.ids().iter().copied().collect();
        prop_assert!(b0.graph.ids().iter().all(|u| ids1.contains(u)));
        let view = SubgraphView::from_ball(&g, &b0).unwrap();
        let (bd, int) = view.boundary_interior().unwrap();
        prop_assert_eq!(bd.len() + int.len(), view.len());
        for (idx, &u) in b0.graph.ids().iter().enumerate() {
            let exterior = g.adjacent(g.index_of(u).unwrap()).iter().any(|&w| !view.contains(g.id(w)));
            if b0.dist[idx] == k && exterior {
                prop_assert!(bd.contains(&u));
            }
            prop_assert_eq!(b0.is_boundary(idx), exterior);
        }
    }

    #[test]
    fn solver_fixed_point_envelope_and_uniqueness(
        g in graph_strategy(9),
        ell in -0.9f64..0.9,
        seed in 0u64..1000,
        adm in admissible(),
        start in proptest::collection::vec(-6.0f64..6.0, 30),
    ) {
        let gm = game(g.clone(), ell, seed, adm);
        let tol = 1e-10;
        let opts = SolveOptions { tol, max_iter: 10_000, record: true };
        let r = gm.picard_solve(&opts).unwrap();
        prop_assert!(r.residual <= tol);
        prop_assert!(r.profile.iter().all(|(_, a)| a.is_adapted(1e-12) && adm.contains(a, 1e-9)));
        let reference = gm.picard_solve(&SolveOptions::tol(1e-14)).unwrap().profile;
        for (j, e) in r.history_errors(&reference).unwrap().iter().enumerate() {
            prop_assert!(*e <= gm.rho().powi(j as i32) * gm.radius() + 1e-12);
        }
        let init = profile(&gm.space, &g, &start);
        let init = {
            let mut p = ActionProfile::new(&gm.space);
            for (v, a) in init.iter() {
                p.insert(*v, adm.project(a)).unwrap();
            }
            p
        };
        let other = gm.picard_solve_from(&init, &SolveOptions::tol(tol)).unwrap();
        prop_assert!(r.profile.sup_distance(&other.profile).unwrap() <= 2.0 * tol / (1.0 - gm.rho()));
    }

    #[test]
    fn truncation_error_within_bound(g in graph_strategy(10), seed in 0u64..1000, k in 0usize..5) {
        let gm = game(g.clone(), 0.6, seed, AdmissibleSet::Ball { radius: 3.0 });
        let opts = SolveOptions::tol(1e-12);
        let global = gm.picard_solve(&opts).unwrap();
        let bound = 2.0 * gm.rho().powi(k as i32) * gm.radius();
        for &v in g.ids() {
            let local = gm.truncated_local_solve(v, k, &opts).unwrap();
            prop_assert!(local.root_action().distance(global.profile.require(v).unwrap()).unwrap() <= bound + 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn covariance_is_symmetric(g in graph_strategy(8), seed in 0u64..100, w in -2.0f64..2.0) {
        let template = GameTemplate {
            graph: Arc::new(g.clone()),
            utility: Arc::new(QuadraticUtility::new(1.0, 0.5, 1.0).unwrap()),
            admissible: AdmissibleSet::Ball { radius: 3.0 },
            normalization: Normalization::Degree,
            times: vec![0.0],
            theta: ThetaGenerator::IidRademacher { scale: 1.0 },
            seed,
        };
        let h1 = BTreeSet::from([g.id(0)]);
        let h2 = BTreeSet::from([g.id(g.len() - 1)]);
        let f1 = TestFunction::TanhLinear { weight: vec![w] };
        let f2 = TestFunction::ClippedMean { clip: 1.0 };
        let a = covariance_experiment(&template, &h1, &f1, &h2, &f2, CovarianceMode::Exhaustive).unwrap();
        let b = covariance_experiment(&template, &h2, &f2, &h1, &f1, CovarianceMode::Exhaustive).unwrap();
        prop_assert!((a.cov - b.cov).abs() < 1e-14);
        prop_assert!(a.pass && b.pass);
    }

    #[test]
    fn dstar_is_a_pseudometric(
        x in graph_strategy(7), y in graph_strategy(7), z in graph_strategy(7),
        rx in 0usize..7, ry in 0usize..7, rz in 0usize..7,
    ) {
        let kmax = 6;
        let slack = 2.0 * 0.5f64.powi(kmax as i32);
        let pts = [(&x, x.id(rx % x.len())), (&y, y.id(ry % y.len())), (&z, z.id(rz % z.len()))];
        let d = |i: usize, j: usize| {
            dstar_truncated(&MarkedRooted::unmarked(pts[i].0, pts[i].1), &MarkedRooted::unmarked(pts[j].0, pts[j].1), kmax)
                .unwrap()
                .value
        };
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert!((d(0, 1) - d(1, 0)).abs() <= 1e-15);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + slack);
    }
}
