//! Floating-point tolerances.
//!
//! The underlying theory is stated over the reals. Every threshold that the
//! double-precision implementation needs to monitor those statements lives
//! here, in one record, so runs can report exactly what they were checked
//! against.

use serde::{Deserialize, Serialize};

/// Relative symmetry tolerance accepted by [`crate::linalg::chol_factor`].
pub const SYMMETRY_REL: f64 = 1e-12;
/// Pivot threshold relative to the largest diagonal entry.
pub const PIVOT_REL: f64 = 1e-13;
/// Slacks at or below this value are treated as leaving the strict interior.
pub const FEAS_MARGIN: f64 = 1e-12;
/// Additive slack on every monitored ACC inequality.
pub const ACC_SLACK: f64 = 1e-9;
/// Additive slack on the geometric-progress checks.
pub const PROGRESS_SLACK: f64 = 1e-12;
/// Below this local norm of `c` the cost is treated as identically zero.
pub const DEGENERATE_COST: f64 = 1e-300;
/// Relative determinant guard used when enumerating vertices.
pub const DET_GUARD_REL: f64 = 1e-12;
/// Relative tolerance of contract equalities in checked interpretation.
pub const CONTRACT_EQ_REL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub symmetry_rel: f64,
    pub pivot_rel: f64,
    pub feas_margin: f64,
    pub acc_slack: f64,
    pub progress_slack: f64,
    pub degenerate_cost: f64,
    pub det_guard_rel: f64,
    pub contract_eq_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            symmetry_rel: SYMMETRY_REL,
            pivot_rel: PIVOT_REL,
            feas_margin: FEAS_MARGIN,
            acc_slack: ACC_SLACK,
            progress_slack: PROGRESS_SLACK,
            degenerate_cost: DEGENERATE_COST,
            det_guard_rel: DET_GUARD_REL,
            contract_eq_rel: CONTRACT_EQ_REL,
        }
    }
}
