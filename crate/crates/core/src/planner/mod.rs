//! The decomposed planner: waypoints and assignments, spline timing and the
//! short tracking horizon, tied together by the control cycle.

mod baseline;
mod cycle;
mod horizon;
mod params;
mod spline;
mod timing;
mod waypoints;

use std::sync::atomic::{AtomicUsize, Ordering};

use thiserror::Error;

pub use baseline::{baseline_assignment, linearize_baseline};
pub use cycle::{
    mpc_cycle, run_phases, CycleContext, CycleDiagnostics, CycleMemory, CycleOutput, CycleProbe, PhaseOutcome,
    PhasePlan,
};
pub use horizon::{reference, solve_horizon, HorizonPlan, Obstacle};
pub use params::PlannerParams;
pub use spline::{eval_spline, AgentSpline};
pub use timing::{solve_timing, TimingSolution};
pub use waypoints::{solve_waypoints, waypoint_objective, Stage, WaypointCache, WaypointSet, WaypointSolution};

use crate::assignment::AssignmentError;
use crate::graph::PathError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("none of the {branches} assignments gave a feasible waypoint problem")]
    AllBranchesInfeasible { branches: usize },
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("timing problem failed: {0}")]
    Timing(String),
    #[error("horizon problem failed: {0}")]
    Horizon(String),
}

/// Maps `f` over `items` on up to `threads` scoped workers, keeping order.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut out: Vec<(usize, R)> = std::thread::scope(|s| {
        let workers: Vec<_> = (0..threads.min(items.len()))
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        local.push((i, f(&items[i])));
                    }
                    local
                })
            })
            .collect();
        workers.into_iter().flat_map(|w| w.join().expect("worker panicked")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}
