//! Inverse optimal control for constrained trajectories.
//!
//! Forward problems are discrete-time optimal control problems with a cost
//! linear in unknown weights `theta`, polytopic stage constraints and implicit
//! dynamics. The estimators recover `theta` from demonstrations by solving a
//! linear least-squares problem built from the stationarity conditions.

pub mod cls;
pub mod demos;
pub mod error;
pub mod estimators;
pub mod fdcheck;
pub mod jacobians;
pub mod model;
pub mod solver;
pub mod systems;

pub use error::{Error, Result};
pub use model::{OcpSpec, Polytope, Theta, Trajectory};
pub use solver::{kkt_residual, solve_ocp, solve_penalized_ocp, OcpSolution, SolverOptions};
