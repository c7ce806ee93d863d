//! Tolerances pinned by the acceptance report in `tests/acceptance.rs`.

/// Allowed gap between a converged common rate and the grid oracle.
pub const RATE_TOL_KW: f64 = 1e-2;
/// Grid step of the oracle the rates are compared against.
pub const ORACLE_STEP_KW: f64 = 1e-4;
pub const STD_TOL_KW: f64 = 1e-3;
pub const MEAN_SPREAD_TOL_KW: f64 = 1e-3;
/// Baselines must stay further than this relative gap from the oracle objective.
pub const BASELINE_GAP: f64 = 0.05;
