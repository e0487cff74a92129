//! Solver library for the penalty-regularized sandpile equation
//! -eps*Lap(u) + gamma*P(u) = f with the gradient constraint |D u| <= phi,
//! and for the associated source-control problem min J(u(f), f).
//!
//! Modules:
//! - [`grid`]: fields, discrete gradients and adjoints, stiffness, norms,
//!   field file i/o.
//! - [`penalty`]: the nonsmooth penalty operator, its Newton derivative and
//!   convex potential.
//! - [`state`]: residual, semismooth Newton iteration and (gamma, mu)
//!   path-following.
//! - [`sensitivity`]: sensitivity/adjoint solves with the linearized state
//!   operator.
//! - [`control`]: reduced objective, adjoint gradient and steepest descent.
//! - [`oracle`]: independent ADMM/dense/finite-difference references.
//! - [`verify`]: named property checks aggregated into a verdict document.

pub mod control;
pub mod grid;
pub mod linalg;
pub mod oracle;
pub mod penalty;
pub mod sensitivity;
pub mod state;
pub mod verify;

pub use control::{optimize, objective, reduced_gradient, ControlParams, ControlTrace, Descent};
pub use grid::{
    center_values, dual_h1_norm, gradient, gradient_adjoint, h1_norm, incremental_gradient,
    incremental_gradient_adjoint, norms, read_field, stiffness_apply, write_field,
    CellVectorField, FieldError, Grid, NodalField, Norms, ObstacleField,
};
pub use oracle::{dense_solve, fd_directional, newton_ratio_probe, vi_solve_admm, AdmmParams};
pub use penalty::{
    clamp_pm, clamp_pm_deriv, feasibility_violation, penalty_apply, penalty_deriv_apply,
    penalty_energy, point_jet, GradMode, PenaltyPointJet,
};
pub use state::{
    newton_step, path_follow, residual, solve_state, Damping, PathError, RunReport, Schedule,
    SolveError, SolverParams,
};
pub use sensitivity::{solve_adjoint, solve_sensitivity};
pub use verify::{run_suite, CheckResult, Suite, Verdict};
