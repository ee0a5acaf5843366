//! Local topology on rooted marked graphs: isomorphism of balls, the
//! truncated local distance, empirical neighborhood statistics, the
//! mass-transport principle and the block exhaustion of the line.

pub mod dstar;
pub mod exhaustion;
pub mod iso;
pub mod lwc;
pub mod mtp;

pub use dstar::{dstar_truncated, DStar, MarkedRooted, DEFAULT_KMAX};
pub use exhaustion::{sample_block_exhaustion_z, BlockSample};
pub use iso::{ball_isomorphic, min_max_isomorphism, ISO_CAP};
pub use lwc::{
    empirical_lwc_gap, equilibrium_convergence_experiment, ConvergenceOutcome, ConvergenceSpec,
    DiscrepancyReport, DiscrepancyRow, FamilyEstimate, GraphSequence, LwcModel, FAMILY,
};
pub use mtp::{fixed_root_law, mtp_check, uniform_root_law, MtpReport};
