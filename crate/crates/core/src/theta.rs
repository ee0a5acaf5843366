//! Heterogeneity profiles and their generators.
//!
//! Random generators draw each vertex from its own stream keyed by
//! `(seed, vertex)`, so a vertex receives the same process no matter which
//! ambient graph (or which ball of it) is being sampled.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::VertexId;
use crate::process::{ActionProcess, ActionProfile, ScenarioSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaGenerator {
    Constant {
        value: f64,
    },
    IidGaussian {
        mean: f64,
        std: f64,
    },
    /// Uniform on `{-scale, +scale}` per block and time point.
    IidRademacher {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Shared Gaussian component plus an idiosyncratic one. Vertices are not
    /// independent unless `common_std == 0`.
    CommonNoise {
        common_std: f64,
        idiosyncratic_std: f64,
    },
    /// On an exhaustive sign space over the vertex list `vertices`, vertex
    /// `vertices[i]` receives `scale * (+1 or -1)` according to bit `i` of the
    /// atom index; every other vertex receives zero.
    ExhaustiveSigns {
        vertices: Vec<VertexId>,
        #[serde(default = "one")]
        scale: f64,
    },
    /// CSV with rows `vertex,scenario,time,value` (header optional).
    FromFile {
        path: PathBuf,
    },
}

fn one() -> f64 {
    1.0
}

impl ThetaGenerator {
    /// Whether distinct vertices receive independent processes.
    pub fn is_independent(&self) -> bool {
        match self {
            ThetaGenerator::CommonNoise { common_std, .. } => *common_std == 0.0,
            ThetaGenerator::FromFile { .. } => false,
            _ => true,
        }
    }
}

/// Splitmix64 finalizer, used to derive per-vertex stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, key: i64) -> u64 {
    mix64(mix64(seed) ^ (key as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn vertex_rng(seed: u64, v: VertexId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, v.0))
}

/// Anything that can hand out the heterogeneity process of a vertex.
pub trait ThetaSource: Send + Sync {
    fn theta(&self, v: VertexId) -> Result<ActionProcess>;
}

impl ThetaSource for ActionProfile {
    fn theta(&self, v: VertexId) -> Result<ActionProcess> {
        self.require(v).cloned()
    }
}

/// Lazily evaluated generator over a fixed space and seed.
#[derive(Debug, Clone)]
pub struct KeyedTheta {
    pub space: Arc<ScenarioSpace>,
    pub generator: ThetaGenerator,
    pub seed: u64,
    table: Option<Arc<BTreeMap<VertexId, ActionProcess>>>,
}

impl KeyedTheta {
    pub fn new(space: &Arc<ScenarioSpace>, generator: ThetaGenerator, seed: u64) -> Result<Self> {
        let table = match &generator {
            ThetaGenerator::FromFile { path } => Some(Arc::new(load_theta_file(space, path)?)),
            ThetaGenerator::ExhaustiveSigns { vertices, .. } => {
                let need = 1usize
                    .checked_shl(vertices.len() as u32)
                    .ok_or_else(|| Error::Hypothesis("too many sign vertices".into()))?;
                if space.atoms() != need || space.block_count(0) != need {
                    return Err(Error::Hypothesis(format!(
                        "exhaustive signs over {} vertices need {} atoms revealed at t0",
                        vertices.len(),
                        need
                    )));
                }
                None
            }
            _ => None,
        };
        Ok(KeyedTheta {
            space: Arc::clone(space),
            generator,
            seed,
            table,
        })
    }

    pub fn sample(&self, v: VertexId) -> Result<ActionProcess> {
        let space = &self.space;
        let steps = space.steps();
        match &self.generator {
            ThetaGenerator::Constant { value } => Ok(ActionProcess::constant(space, *value)),
            ThetaGenerator::IidGaussian { mean, std } => {
                let normal = Normal::new(*mean, *std)
                    .map_err(|e| Error::config("theta.std", e.to_string()))?;
                let mut rng = vertex_rng(self.seed, v);
                Ok(blockwise(space, || normal.sample(&mut rng)))
            }
            ThetaGenerator::IidRademacher { scale } => {
                let mut rng = vertex_rng(self.seed, v);
                Ok(blockwise(space, || if rng.random::<bool>() { *scale } else { -*scale }))
            }
            ThetaGenerator::CommonNoise {
                common_std,
                idiosyncratic_std,
            } => {
                let idio = Normal::new(0.0, *idiosyncratic_std)
                    .map_err(|e| Error::config("theta.idiosyncratic_std", e.to_string()))?;
                let common = Normal::new(0.0, *common_std)
                    .map_err(|e| Error::config("theta.common_std", e.to_string()))?;
                let mut shared = ChaCha8Rng::seed_from_u64(mix64(self.seed ^ 0xC0FF_EE00));
                let mut rng = vertex_rng(self.seed, v);
                let base = blockwise(space, || common.sample(&mut shared));
                let own = blockwise(space, || idio.sample(&mut rng));
                base.combine(1.0, &own, 1.0)
            }
            ThetaGenerator::ExhaustiveSigns { vertices, scale } => {
                match vertices.iter().position(|&w| w == v) {
                    None => Ok(ActionProcess::zeros(space)),
                    Some(bit) => Ok(ActionProcess::from_fn(space, |s, _| {
                        if (s >> bit) & 1 == 1 {
                            *scale
                        } else {
                            -*scale
                        }
                    })),
                }
            }
            ThetaGenerator::FromFile { .. } => {
                let table = self.table.as_ref().expect("loaded in new");
                table.get(&v).cloned().ok_or(Error::IncompleteProfile(v))
            }
        }
        .map(|p| {
            debug_assert_eq!(p.values().len(), space.atoms() * steps);
            p
        })
    }
}

impl ThetaSource for KeyedTheta {
    fn theta(&self, v: VertexId) -> Result<ActionProcess> {
        self.sample(v)
    }
}

/// Draws one value per block of every partition, in time order and then by
/// block label, so the result is adapted by construction.
fn blockwise(space: &Arc<ScenarioSpace>, mut draw: impl FnMut() -> f64) -> ActionProcess {
    let steps = space.steps();
    let mut values = vec![0.0; space.len()];
    for j in 0..steps {
        let block_values: Vec<f64> = (0..space.block_count(j)).map(|_| draw()).collect();
        for s in 0..space.atoms() {
            values[s * steps + j] = block_values[space.block_of(s, j)];
        }
    }
    ActionProcess::from_raw(space, values)
}

/// Samples a heterogeneity profile on the vertex set `vertices`.
pub fn sample_theta<I: IntoIterator<Item = VertexId>>(
    space: &Arc<ScenarioSpace>,
    vertices: I,
    generator: &ThetaGenerator,
    seed: u64,
) -> Result<ActionProfile> {
    let keyed = KeyedTheta::new(space, generator.clone(), seed)?;
    let mut profile = ActionProfile::new(space);
    for v in vertices {
        profile.insert(v, keyed.sample(v)?)?;
    }
    Ok(profile)
}

fn load_theta_file(
    space: &Arc<ScenarioSpace>,
    path: &std::path::Path,
) -> Result<BTreeMap<VertexId, ActionProcess>> {
    let text = std::fs::read_to_string(path)?;
    let steps = space.steps();
    let mut raw: BTreeMap<VertexId, Vec<Option<f64>>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("vertex") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = || Error::config(format!("{}:{}", path.display(), lineno + 1), "expected vertex,scenario,time,value");
        if fields.len() != 4 {
            return Err(err());
        }
        let v: i64 = fields[0].parse().map_err(|_| err())?;
        let s: usize = fields[1].parse().map_err(|_| err())?;
        let j: usize = fields[2].parse().map_err(|_| err())?;
        let x: f64 = fields[3].parse().map_err(|_| err())?;
        if s >= space.atoms() || j >= steps {
            return Err(err());
        }
        raw.entry(VertexId(v)).or_insert_with(|| vec![None; space.len()])[s * steps + j] = Some(x);
    }
    raw.into_iter()
        .map(|(v, vals)| {
            let vals: Option<Vec<f64>> = vals.into_iter().collect();
            let vals = vals.ok_or_else(|| {
                Error::config(path.display().to_string(), format!("vertex {v} is incomplete"))
            })?;
            let p = ActionProcess::from_values(space, vals)?;
            if !p.is_adapted(1e-12) {
                return Err(Error::InvalidProcess(format!("theta of vertex {v} is not adapted")));
            }
            Ok((v, p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cycle, path, Graph};
    use crate::process::NamedFiltration;

    #[test]
    fn constant_zero_profile() {
        let sp = Arc::new(ScenarioSpace::single());
        let th = sample_theta(&sp, (0..4).map(VertexId), &ThetaGenerator::Constant { value: 0.0 }, 1).unwrap();
        assert_eq!(th.sup_norm(), 0.0);
    }

    #[test]
    fn exhaustive_signs_enumerate_all_patterns() {
        let verts: Vec<VertexId> = (0..4).map(VertexId).collect();
        let sp = Arc::new(ScenarioSpace::exhaustive_signs(4, vec![0.0]).unwrap());
        assert_eq!(sp.atoms(), 16);
        assert!(sp.probs().iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));
        let gen = ThetaGenerator::ExhaustiveSigns { vertices: verts.clone(), scale: 1.0 };
        let th = sample_theta(&sp, verts.iter().copied(), &gen, 0).unwrap();
        let mut patterns: Vec<Vec<i32>> = (0..16)
            .map(|s| verts.iter().map(|&v| th.get(v).unwrap().get(s, 0) as i32).collect())
            .collect();
        patterns.sort();
        patterns.dedup();
        assert_eq!(patterns.len(), 16);
    }

    #[test]
    fn keyed_streams_ignore_the_ambient_graph() {
        let sp = Arc::new(ScenarioSpace::uniform(3, vec![0.0, 1.0], NamedFiltration::RevealAtStart).unwrap());
        let gen = ThetaGenerator::IidGaussian { mean: 0.0, std: 1.0 };
        let a = sample_theta(&sp, cycle(10).unwrap().ids().iter().copied(), &gen, 42).unwrap();
        let b = sample_theta(&sp, path(5).unwrap().ids().iter().copied(), &gen, 42).unwrap();
        for v in (0..5).map(VertexId) {
            assert_eq!(a.get(v), b.get(v));
        }
        let other_seed = sample_theta(&sp, [VertexId(0)], &gen, 43).unwrap();
        assert_ne!(other_seed.get(VertexId(0)), a.get(VertexId(0)));
        let _ = path(5).unwrap().neighbors(VertexId(0)).unwrap();
    }

    #[test]
    fn sampled_processes_are_adapted() {
        let sp = Arc::new(
            ScenarioSpace::new(
                vec![0.25; 4],
                vec![0.0, 1.0, 2.0],
                vec![vec![0, 0, 0, 0], vec![0, 0, 1, 1], vec![0, 1, 2, 3]],
            )
            .unwrap(),
        );
        for gen in [
            ThetaGenerator::IidGaussian { mean: 1.0, std: 2.0 },
            ThetaGenerator::IidRademacher { scale: 1.0 },
            ThetaGenerator::CommonNoise { common_std: 1.0, idiosyncratic_std: 0.5 },
        ] {
            let th = sample_theta(&sp, (0..6).map(VertexId), &gen, 9).unwrap();
            assert!(th.iter().all(|(_, p)| p.is_adapted(0.0)));
        }
    }

    #[test]
    fn theta_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("theta.csv");
        std::fs::write(&file, "vertex,scenario,time,value\n0,0,0,1.5\n1,0,0,-2\n").unwrap();
        let sp = Arc::new(ScenarioSpace::single());
        let th = sample_theta(&sp, [VertexId(0), VertexId(1)], &ThetaGenerator::FromFile { path: file }, 0).unwrap();
        assert_eq!(th.get(VertexId(1)).unwrap().values(), &[-2.0]);
    }

    #[test]
    fn exhaustive_signs_need_matching_space() {
        let sp = Arc::new(ScenarioSpace::single());
        let gen = ThetaGenerator::ExhaustiveSigns { vertices: vec![VertexId(0)], scale: 1.0 };
        assert!(KeyedTheta::new(&sp, gen, 0).is_err());
    }
}
