//! Arbitrary-time consensus for single- and double-integrator agents on
//! undirected (possibly switching) graphs, with a unicycle formation
//! application and numerical certificates for the convergence claims.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod formation;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod protocol;
pub mod scenario;
pub mod sim;

pub use error::{Error, Result};
pub use graph::{build_laplacian, Laplacian, Network, SwitchingSchedule, Topology};
pub use protocol::FwatParams;
pub use sim::{IntegratorConfig, Method, Trajectory};
