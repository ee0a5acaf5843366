//! Mass-transport check on finite graphs with a given root law.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::FiniteGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MtpReport {
    /// `E[sum_v F(G, o, v)]`: mass sent out of the root.
    pub sent: f64,
    /// `E[sum_v F(G, v, o)]`: mass received by the root.
    pub received: f64,
    pub pass: bool,
}

/// Compares mass sent and received by a root drawn from `root_law`
/// (indexed like the graph's dense indices).
pub fn mtp_check(
    g: &FiniteGraph,
    root_law: &[f64],
    f: impl Fn(&FiniteGraph, usize, usize) -> f64,
    tol: f64,
) -> Result<MtpReport> {
    if root_law.len() != g.len() {
        return Err(Error::InvalidGraph(format!(
            "root law has {} weights for {} vertices",
            root_law.len(),
            g.len()
        )));
    }
    let total: f64 = root_law.iter().sum();
    if root_law.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidGraph("root law must be a probability vector".into()));
    }
    let (mut sent, mut received) = (0.0, 0.0);
    for (o, &p) in root_law.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for v in 0..g.len() {
            sent += p * f(g, o, v);
            received += p * f(g, v, o);
        }
    }
    Ok(MtpReport {
        sent,
        received,
        pass: (sent - received).abs() <= tol,
    })
}

pub fn uniform_root_law(g: &FiniteGraph) -> Vec<f64> {
    vec![1.0 / g.len() as f64; g.len()]
}

/// Point mass at dense index `root`.
pub fn fixed_root_law(g: &FiniteGraph, root: usize) -> Vec<f64> {
    let mut law = vec![0.0; g.len()];
    law[root] = 1.0;
    law
}
