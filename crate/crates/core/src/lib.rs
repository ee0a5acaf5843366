//! Network games with stochastic, path-valued actions on sparse graphs:
//! equilibrium solvers, locality certificates and local weak convergence tools.

pub mod error;
pub mod graph;
pub mod process;
pub mod theta;
pub mod utility;
pub mod volterra;
pub mod equilibrium;
pub mod locality;
pub mod local_weak;
pub mod harness;

pub use error::{Error, Result};
