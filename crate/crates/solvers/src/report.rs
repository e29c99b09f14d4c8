use thiserror::Error;

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

/// Per outer-iteration trace of the constrained NLP method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub violation: f64,
    pub penalty: f64,
}

/// Result of a QP or NLP solve.
///
/// `multipliers` holds the row duals for a QP (positive on upper bounds,
/// negative on lower bounds) and the nonnegative inequality multipliers for
/// an NLP. `penalty` is the final augmented Lagrangian weight for NLPs and
/// the final ADMM step size for QPs.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub inner_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub multipliers: Vec<f64>,
    pub penalty: f64,
    pub history: Vec<crate::OuterRecord>,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cost matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("cost matrix is not positive semidefinite")]
    NotPsd,
    #[error("non-finite problem data: {0}")]
    NonFinite(String),
    #[error("bound {index} has lower {lower} above upper {upper}")]
    InvertedBounds { index: usize, lower: f64, upper: f64 },
}
