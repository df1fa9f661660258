//! Constraint abstractions, closed-form projections and the
//! augmented-Lagrangian projection solver.

mod alm;
mod constraint;
mod exact;

pub use alm::{alm_project, solve_alm, AlmConfig, AlmOutcome, AlmProblem, Cost, ProjectionResult, WarmState};
pub use constraint::{residual_linear, BoxConstraint, Constraint, ConstraintSet, LinearConstraint, DELTA_CHECK};
pub use exact::{project_box, project_halfspace, project_topk_negative};

pub(crate) use alm::{kl_rows, rows_softmax};
