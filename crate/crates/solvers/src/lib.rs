//! Small dense optimisation engines used by the planner.
//!
//! Two solvers live here:
//!
//! * [`solve_qp`] handles convex quadratic programs
//!
//!   ```text
//!   minimize    1/2 x' P x + q' x
//!   subject to  l <= A x <= u
//!   ```
//!
//!   with an operator-splitting (ADMM) iteration over a dense factorisation,
//!   followed by an active-set polishing step that recovers the exact KKT
//!   point once the active set has been identified.
//!
//! * [`solve_nlp`] handles smooth nonlinear programs with inequality
//!   residuals `g(x) <= 0` and simple bounds, using an augmented Lagrangian
//!   outer loop around a projected Newton inner solve. Problems may supply
//!   an exact Lagrangian Hessian; otherwise a damped BFGS model is used.
//!
//! Everything is dense and single threaded. Problems in this workspace have
//! at most a few hundred variables.

mod dense;
mod nlp;
mod qp;
mod report;

pub use nlp::{solve_nlp, ClosureNlp, NlpOptions, NlpProblem, NlpStart, SparseRows};
pub use qp::{solve_qp, QpOptions, QpProblem};
pub use report::{OuterRecord, SolveReport, SolveStatus, SolverError};
