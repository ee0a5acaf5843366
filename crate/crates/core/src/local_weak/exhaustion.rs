//! Finitary exhaustion of the line by random blocks.
//!
//! Edges `{x, x+1}` are removed whenever `x + 1 ≡ U (mod n)`, so blocks start
//! at positions congruent to `U`. The component of the origin is a path of
//! `n` vertices in which the origin sits at a uniform position. For powers of
//! two the offsets are coupled, `U_{2n} ∈ {U_n, U_n + n}`, which makes the
//! blocks nested.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{FiniteGraph, VertexId};

#[derive(Debug, Clone)]
pub struct BlockSample {
    /// Path on the block positions, rooted at the origin.
    pub graph: FiniteGraph,
    pub offset: u64,
    /// Leftmost position of the block.
    pub start: i64,
    /// Position of the origin inside the block, in `0..n`.
    pub root_position: usize,
}

/// Offset for block length `n`; powers of two reuse the same bit stream.
pub fn block_offset(n: usize, seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n.is_power_of_two() {
        let levels = n.trailing_zeros();
        (0..levels).fold(0u64, |u, i| u | ((rng.random::<bool>() as u64) << i))
    } else {
        rng.random_range(0..n as u64)
    }
}

pub fn sample_block_exhaustion_z(n: usize, seed: u64) -> Result<BlockSample> {
    if n == 0 {
        return Err(Error::InvalidGraph("block length must be at least 1".into()));
    }
    let offset = block_offset(n, seed);
    let start = if offset == 0 { 0 } else { offset as i64 - n as i64 };
    let ids: Vec<VertexId> = (0..n as i64).map(|i| VertexId(start + i)).collect();
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    let graph = FiniteGraph::from_indexed_edges(ids, &edges)?.with_root(VertexId(0))?;
    Ok(BlockSample {
        graph,
        offset,
        start,
        root_position: (-start) as usize,
    })
}
