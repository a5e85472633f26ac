//! Short-step primal interior-point LP solving with runtime-checked
//! invariants, plus generation of instance-specialized kernels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod codegen;
pub mod ipm;
pub mod linalg;
pub mod lp;
pub mod mpc;
pub mod oracle;
pub mod suite;
pub mod tolerances;

pub use barrier::{eval_barrier, BarrierError, BarrierEval};
pub use ipm::{solve, IpmConfig, IterationSchedule, MonitorMode, SolveCertificate, SolveError};
pub use linalg::{LinalgError, Matrix};
pub use lp::{LpInstance, LpJson};
pub use oracle::{solve_by_vertex_enumeration, OracleError, OracleResult};
