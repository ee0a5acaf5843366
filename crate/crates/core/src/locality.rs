//! Covariance of bounded Lipschitz functionals of equilibrium trajectories
//! on separated subgraphs, against the exponential decay bound.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::equilibrium::{Game, SolveOptions};
use crate::error::{Error, Result};
use crate::graph::{subgraph_distance, FiniteGraph, Normalization, VertexId};
use crate::process::{ActionProfile, AdmissibleSet, NamedFiltration, ScenarioSpace};
use crate::theta::{KeyedTheta, ThetaGenerator};
use crate::utility::Utility;

/// Largest exhaustive enumeration, in sign bits.
pub const EXHAUSTIVE_MAX_BITS: usize = 20;
/// Roundoff allowance for exhaustive comparisons (solves run at `1e-12`).
pub const EXHAUSTIVE_SLACK: f64 = 1e-12;

/// Bounded Lipschitz maps on `(path_v)_{v in H}` with respect to
/// `d_H(x, y) = sup_v ||x_v - y_v||`, the path norm being the Euclidean
/// norm on the time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `tanh(sum_v <w, x_v>)`.
    TanhLinear { weight: Vec<f64> },
    /// Mean over vertices and times, clipped to `[-clip, clip]`.
    ClippedMean { clip: f64 },
    /// Maximum over vertices and times, clipped to `[-clip, clip]`.
    ClippedMax { clip: f64 },
    Constant { value: f64 },
}

impl TestFunction {
    /// Unit-weight tanh of the first time coordinate of each path.
    pub fn tanh_first(steps: usize) -> Self {
        let mut weight = vec![0.0; steps];
        weight[0] = 1.0;
        TestFunction::TanhLinear { weight }
    }

    pub fn eval(&self, paths: &[&[f64]]) -> f64 {
        match self {
            TestFunction::TanhLinear { weight } => paths
                .iter()
                .map(|p| p.iter().zip(weight).map(|(x, w)| x * w).sum::<f64>())
                .sum::<f64>()
                .tanh(),
            TestFunction::ClippedMean { clip } => {
                let n: usize = paths.iter().map(|p| p.len()).sum();
                let s: f64 = paths.iter().flat_map(|p| p.iter()).sum();
                (s / n as f64).clamp(-clip, *clip)
            }
            TestFunction::ClippedMax { clip } => paths
                .iter()
                .flat_map(|p| p.iter().copied())
                .fold(f64::NEG_INFINITY, f64::max)
                .clamp(-clip, *clip),
            TestFunction::Constant { value } => *value,
        }
    }

    pub fn sup_bound(&self) -> f64 {
        match self {
            TestFunction::TanhLinear { .. } => 1.0,
            TestFunction::ClippedMean { clip } | TestFunction::ClippedMax { clip } => *clip,
            TestFunction::Constant { value } => value.abs(),
        }
    }

    /// Lipschitz constant on `|H|` paths with `steps` time points.
    pub fn lipschitz(&self, h_size: usize, steps: usize) -> f64 {
        match self {
            TestFunction::TanhLinear { weight } => {
                h_size as f64 * weight.iter().map(|w| w * w).sum::<f64>().sqrt()
            }
            // |mean_j d_j| <= ||d|| / sqrt(steps)
            TestFunction::ClippedMean { .. } => 1.0 / (steps as f64).sqrt(),
            TestFunction::ClippedMax { .. } => 1.0,
            TestFunction::Constant { .. } => 0.0,
        }
    }

    pub fn bl_norm(&self, h_size: usize, steps: usize) -> f64 {
        self.sup_bound().max(self.lipschitz(h_size, steps))
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        match self {
            TestFunction::TanhLinear { weight } if weight.len() != steps => Err(Error::config(
                "weight",
                format!("tanh weight has {} entries, time grid has {steps}", weight.len()),
            )),
            TestFunction::ClippedMean { clip } | TestFunction::ClippedMax { clip } if !(*clip > 0.0) => {
                Err(Error::config("clip", "clip must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Everything about a game except the scenario space, which each mode builds.
#[derive(Debug, Clone)]
pub struct GameTemplate {
    pub graph: Arc<FiniteGraph>,
    pub utility: Arc<dyn Utility>,
    pub admissible: AdmissibleSet,
    pub normalization: Normalization,
    pub times: Vec<f64>,
    pub theta: ThetaGenerator,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Enumerate every sign pattern of the heterogeneity.
    Exhaustive,
    /// `replications` independent atoms revealed at the start. Atoms only
    /// decouple when the admissible set acts pointwise (a box) or the ball
    /// constraint is inactive; otherwise the game on the empirical measure
    /// is solved.
    MonteCarlo { replications: usize },
}

/// Equilibrium on a scenario space that carries the heterogeneity law.
#[derive(Debug, Clone)]
pub struct EquilibriumLaw {
    pub space: Arc<ScenarioSpace>,
    pub profile: ActionProfile,
    pub exhaustive: bool,
    pub rho: f64,
    pub radius: f64,
}

impl GameTemplate {
    pub fn solve_law(&self, mode: CovarianceMode) -> Result<EquilibriumLaw> {
        if !self.theta.is_independent() {
            return Err(Error::Hypothesis(
                "covariance experiments need heterogeneity independent across vertices".into(),
            ));
        }
        let (space, generator) = match mode {
            CovarianceMode::Exhaustive => {
                let generator = match &self.theta {
                    ThetaGenerator::ExhaustiveSigns { .. } => self.theta.clone(),
                    ThetaGenerator::IidRademacher { scale } => ThetaGenerator::ExhaustiveSigns {
                        vertices: self.graph.ids().to_vec(),
                        scale: *scale,
                    },
                    ThetaGenerator::Constant { .. } => self.theta.clone(),
                    other => {
                        return Err(Error::Hypothesis(format!(
                            "exhaustive mode needs sign heterogeneity, got {other:?}"
                        )))
                    }
                };
                let bits = match &generator {
                    ThetaGenerator::ExhaustiveSigns { vertices, .. } => vertices.len(),
                    _ => 0,
                };
                if bits > EXHAUSTIVE_MAX_BITS {
                    return Err(Error::Capacity {
                        what: "exhaustive atoms (log2)",
                        size: bits,
                        cap: EXHAUSTIVE_MAX_BITS,
                    });
                }
                (ScenarioSpace::exhaustive_signs(bits, self.times.clone())?, generator)
            }
            CovarianceMode::MonteCarlo { replications } => {
                if replications < 2 {
                    return Err(Error::config("replications", "need at least 2 replications"));
                }
                if matches!(self.theta, ThetaGenerator::ExhaustiveSigns { .. }) {
                    return Err(Error::config("theta", "exhaustive signs need exhaustive mode"));
                }
                (
                    ScenarioSpace::uniform(replications, self.times.clone(), NamedFiltration::RevealAtStart)?,
                    self.theta.clone(),
                )
            }
        };
        let space = Arc::new(space);
        let theta = Arc::new(KeyedTheta::new(&space, generator, self.seed)?);
        let game = Game::new(
            self.graph.clone(),
            space.clone(),
            theta,
            self.utility.clone(),
            self.admissible.clone(),
            self.normalization,
        )?;
        let sol = game.picard_solve(&SolveOptions::tol(1e-12))?;
        Ok(EquilibriumLaw {
            space,
            profile: sol.profile,
            exhaustive: matches!(mode, CovarianceMode::Exhaustive),
            rho: game.rho(),
            radius: game.radius(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    pub distance: Option<usize>,
    pub k: Option<usize>,
    pub cov: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

/// `2 rho^k M (|H1| + |H2|) ||f1||_BL ||f2||_BL`; zero for disconnected sets.
pub fn decay_bound(rho: f64, radius: f64, k: Option<usize>, sizes: (usize, usize), bl: (f64, f64)) -> f64 {
    match k {
        Some(k) => 2.0 * rho.powi(k as i32) * radius * (sizes.0 + sizes.1) as f64 * bl.0 * bl.1,
        None => 0.0,
    }
}

impl EquilibriumLaw {
    fn values(&self, h: &BTreeSet<VertexId>, f: &TestFunction) -> Result<Vec<f64>> {
        let procs = h.iter().map(|&v| self.profile.require(v)).collect::<Result<Vec<_>>>()?;
        Ok((0..self.space.atoms())
            .map(|s| {
                let paths: Vec<&[f64]> = procs.iter().map(|p| p.path(s)).collect();
                f.eval(&paths)
            })
            .collect())
    }

    /// Covariance and its standard error (zero in exhaustive mode).
    pub fn covariance(
        &self,
        h1: &BTreeSet<VertexId>,
        f1: &TestFunction,
        h2: &BTreeSet<VertexId>,
        f2: &TestFunction,
    ) -> Result<(f64, f64)> {
        let x = self.values(h1, f1)?;
        let y = self.values(h2, f2)?;
        let p = self.space.probs();
        let ex: f64 = x.iter().zip(p).map(|(a, w)| a * w).sum();
        let ey: f64 = y.iter().zip(p).map(|(a, w)| a * w).sum();
        let cov: f64 = x.iter().zip(&y).zip(p).map(|((a, b), w)| w * (a - ex) * (b - ey)).sum();
        if self.exhaustive {
            return Ok((cov, 0.0));
        }
        let n = x.len() as f64;
        let var: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| {
                let psi = (a - ex) * (b - ey) - cov;
                psi * psi
            })
            .sum::<f64>()
            / (n - 1.0);
        Ok((cov, (var / n).sqrt()))
    }

    pub fn experiment(
        &self,
        graph: &FiniteGraph,
        h1: &BTreeSet<VertexId>,
        f1: &TestFunction,
        h2: &BTreeSet<VertexId>,
        f2: &TestFunction,
    ) -> Result<CovarianceReport> {
        let steps = self.space.steps();
        f1.validate(steps)?;
        f2.validate(steps)?;
        let dist = subgraph_distance(graph, h1, h2)?;
        let (cov, stderr) = self.covariance(h1, f1, h2, f2)?;
        let bound = decay_bound(
            self.rho,
            self.radius,
            dist.k,
            (h1.len(), h2.len()),
            (f1.bl_norm(h1.len(), steps), f2.bl_norm(h2.len(), steps)),
        );
        let pass = if self.exhaustive {
            cov.abs() <= bound + EXHAUSTIVE_SLACK
        } else {
            cov.abs() <= bound + 3.0 * stderr
        };
        Ok(CovarianceReport {
            distance: dist.distance,
            k: dist.k,
            cov,
            stderr,
            bound,
            pass,
        })
    }
}

pub fn covariance_experiment(
    template: &GameTemplate,
    h1: &BTreeSet<VertexId>,
    f1: &TestFunction,
    h2: &BTreeSet<VertexId>,
    f2: &TestFunction,
    mode: CovarianceMode,
) -> Result<CovarianceReport> {
    template.solve_law(mode)?.experiment(&template.graph, h1, f1, h2, f2)
}

/// One covariance row per vertex pair, all from a single equilibrium solve.
pub fn decay_profile(
    template: &GameTemplate,
    pairs: &[(VertexId, VertexId)],
    f1: &TestFunction,
    f2: &TestFunction,
    mode: CovarianceMode,
) -> Result<Vec<CovarianceReport>> {
    let law = template.solve_law(mode)?;
    pairs
        .iter()
        .map(|&(u, v)| law.experiment(&template.graph, &BTreeSet::from([u]), f1, &BTreeSet::from([v]), f2))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cycle, path};
    use crate::utility::QuadraticUtility;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn template(graph: FiniteGraph, theta: ThetaGenerator, admissible: AdmissibleSet) -> GameTemplate {
        GameTemplate {
            graph: Arc::new(graph),
            utility: Arc::new(QuadraticUtility::new(1.0, 0.5, 1.0).unwrap()),
            admissible,
            normalization: Normalization::Degree,
            times: vec![0.0],
            theta,
            seed: 1,
        }
    }

    fn set(ids: &[i64]) -> BTreeSet<VertexId> {
        ids.iter().map(|&i| VertexId(i)).collect()
    }

    #[test]
    fn constant_factor_has_zero_covariance() {
        let t = template(path(4).unwrap(), ThetaGenerator::IidRademacher { scale: 1.0 }, AdmissibleSet::Ball { radius: 2.0 });
        let r = covariance_experiment(&t, &set(&[0]), &TestFunction::Constant { value: 0.7 }, &set(&[3]), &TestFunction::tanh_first(1), CovarianceMode::Exhaustive).unwrap();
        assert!(r.cov.abs() < 1e-15);
    }

    /// Independent oracle: loop over the 16 sign patterns, solve each static
    /// 4-player linear system by Jacobi iteration, average directly.
    #[test]
    fn p4_endpoints_exhaustive() {
        let t = template(path(4).unwrap(), ThetaGenerator::IidRademacher { scale: 1.0 }, AdmissibleSet::Box { lo: -3.0, hi: 3.0 });
        let f = TestFunction::tanh_first(1);
        let r = covariance_experiment(&t, &set(&[0]), &f, &set(&[3]), &f, CovarianceMode::Exhaustive).unwrap();
        assert_eq!(r.distance, Some(3));
        assert_eq!(r.k, Some(2));
        assert!((r.bound - 2.0 * 0.25 * 3.0 * 2.0).abs() < 1e-15);
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut sxy = 0.0;
        for pattern in 0..16u32 {
            let th: Vec<f64> = (0..4).map(|i| if pattern >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
            let mut a = [0.0f64; 4];
            for _ in 0..200 {
                let z = [a[1], (a[0] + a[2]) / 2.0, (a[1] + a[3]) / 2.0, a[2]];
                for i in 0..4 {
                    a[i] = (0.5 * z[i] + th[i]).clamp(-3.0, 3.0);
                }
            }
            let (x, y) = (a[0].tanh(), a[3].tanh());
            sx += x / 16.0;
            sy += y / 16.0;
            sxy += x * y / 16.0;
        }
        let oracle = sxy - sx * sy;
        assert!((r.cov - oracle).abs() < 1e-10);
        assert!(oracle.abs() > 1e-6);
        assert!(r.pass);
    }

    #[test]
    fn decay_rows_on_c20() {
        let g = cycle(20).unwrap();
        let w: Vec<VertexId> = (0..16).map(VertexId).collect();
        let t = template(g, ThetaGenerator::ExhaustiveSigns { vertices: w, scale: 1.0 }, AdmissibleSet::Ball { radius: 3.0 });
        let pairs: Vec<_> = (0..=10).map(|d| (VertexId(3), VertexId(3 + d))).collect();
        let f = TestFunction::tanh_first(1);
        let rows = decay_profile(&t, &pairs, &f, &f, CovarianceMode::Exhaustive).unwrap();
        for (d, r) in rows.iter().enumerate() {
            assert_eq!(r.distance, Some(d));
            assert!(r.pass, "{r:?}");
            if d > 0 {
                assert!(r.bound <= rows[d - 1].bound);
            }
        }
        assert!((rows[0].bound - 4.0 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn bound_column_formula() {
        for d in 0..10usize {
            let b = decay_bound(0.5, 1.0, Some(d.div_ceil(2)), (1, 1), (1.0, 1.0));
            assert!((b - 4.0 * 0.5f64.powi(d.div_ceil(2) as i32)).abs() < 1e-15);
        }
        assert_eq!(decay_bound(0.5, 1.0, None, (1, 1), (1.0, 1.0)), 0.0);
    }

    #[test]
    fn symmetry_and_dependence_guard() {
        let t = template(path(5).unwrap(), ThetaGenerator::IidRademacher { scale: 1.0 }, AdmissibleSet::Ball { radius: 2.0 });
        let law = t.solve_law(CovarianceMode::Exhaustive).unwrap();
        let f1 = TestFunction::tanh_first(1);
        let f2 = TestFunction::ClippedMax { clip: 0.8 };
        let a = law.experiment(&t.graph, &set(&[0, 1]), &f1, &set(&[4]), &f2).unwrap();
        let b = law.experiment(&t.graph, &set(&[4]), &f2, &set(&[0, 1]), &f1).unwrap();
        assert!((a.cov - b.cov).abs() < 1e-15);
        assert_eq!(a.bound, b.bound);

        let dep = template(path(3).unwrap(), ThetaGenerator::CommonNoise { common_std: 1.0, idiosyncratic_std: 1.0 }, AdmissibleSet::Ball { radius: 2.0 });
        assert!(matches!(dep.solve_law(CovarianceMode::MonteCarlo { replications: 10 }), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn exhaustive_capacity() {
        let t = template(cycle(21).unwrap(), ThetaGenerator::IidRademacher { scale: 1.0 }, AdmissibleSet::Ball { radius: 2.0 });
        assert!(matches!(t.solve_law(CovarianceMode::Exhaustive), Err(Error::Capacity { .. })));
    }

    #[test]
    fn monte_carlo_within_bound() {
        let t = template(path(6).unwrap(), ThetaGenerator::IidGaussian { mean: 0.0, std: 1.0 }, AdmissibleSet::Box { lo: -2.0, hi: 2.0 });
        let f = TestFunction::tanh_first(1);
        let law = t.solve_law(CovarianceMode::MonteCarlo { replications: 4000 }).unwrap();
        for d in 0..6 {
            let r = law.experiment(&t.graph, &set(&[0]), &f, &set(&[d]), &f).unwrap();
            assert!(r.stderr > 0.0);
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn figure_one_cycle_radius() {
        let g = cycle(30).unwrap();
        let h1 = set(&[0, 1, 2, 3]);
        let h2 = set(&[12, 13, 14, 15, 16]);
        let w: Vec<VertexId> = h1.iter().chain(h2.iter()).copied().collect();
        let t = template(g, ThetaGenerator::ExhaustiveSigns { vertices: w, scale: 1.0 }, AdmissibleSet::Ball { radius: 3.0 });
        let f = TestFunction::ClippedMean { clip: 1.0 };
        let r = covariance_experiment(&t, &h1, &f, &h2, &f, CovarianceMode::Exhaustive).unwrap();
        assert_eq!(r.distance, Some(9));
        assert_eq!(r.k, Some(5));
        assert!((r.bound - 2.0 * 0.5f64.powi(5) * 3.0 * 9.0).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn builtin_functions_respect_declared_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let steps = 3;
        let fns = [
            TestFunction::TanhLinear { weight: vec![0.4, -0.3, 0.2] },
            TestFunction::ClippedMean { clip: 0.5 },
            TestFunction::ClippedMax { clip: 1.5 },
            TestFunction::Constant { value: -2.0 },
        ];
        for f in &fns {
            for h in 1..4 {
                let lip = f.lipschitz(h, steps);
                for _ in 0..1000 {
                    let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> { (0..h).map(|_| (0..steps).map(|_| rng.random_range(-3.0..3.0)).collect()).collect() };
                    let x = draw(&mut rng);
                    let y = if rng.random::<bool>() {
                        draw(&mut rng)
                    } else {
                        x.iter().map(|p| p.iter().map(|v| v + rng.random_range(-0.01..0.01)).collect()).collect()
                    };
                    let xs: Vec<&[f64]> = x.iter().map(|p| p.as_slice()).collect();
                    let ys: Vec<&[f64]> = y.iter().map(|p| p.as_slice()).collect();
                    let d = x
                        .iter()
                        .zip(&y)
                        .map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                        .fold(0.0, f64::max);
                    let (fx, fy) = (f.eval(&xs), f.eval(&ys));
                    assert!(fx.abs() <= f.sup_bound() + 1e-15);
                    assert!((fx - fy).abs() <= lip * d + 1e-12, "{f:?}");
                }
            }
        }
    }
}
