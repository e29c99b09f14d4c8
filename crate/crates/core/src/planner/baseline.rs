//! Total-order, static-assignment baseline: the graph is flattened into one
//! sequence and every node involves every agent.

use std::collections::BTreeMap;

use crate::assignment::AssignmentMatrix;
use crate::constraints::RigidCoupling;
use crate::graph::{lexicographic_topo, Edge, Goc, Relevance, RemainingSet};
use crate::system::{Configuration, SystemSpec};

use super::waypoints::{solve_waypoints, Stage, WaypointCache};
use super::{PlanError, PlannerParams};

/// Chain through a topological order (ascending id among ready nodes).
/// The constraints of an original edge `(a, b)` are placed on every chain
/// edge between `a` and `b`.
pub fn linearize_baseline(goc: &Goc) -> Goc {
    let order = lexicographic_topo(goc);
    let pos: BTreeMap<usize, usize> = order.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut edges: Vec<Edge> =
        order.windows(2).map(|w| Edge { from: w[0], to: w[1], constraints: Vec::new() }).collect();
    for e in &goc.edges {
        for chain_edge in &mut edges[pos[&e.from]..pos[&e.to]] {
            chain_edge.constraints.extend(e.constraints.iter().cloned());
        }
    }
    Goc { nodes: goc.nodes.clone(), edges, subtasks: goc.subtasks }
}

/// The assignment of the cheapest feasible waypoint branch on the chain at
/// the initial state, with every node involving every agent.
pub fn baseline_assignment(
    chain: &Goc,
    spec: &SystemSpec,
    x0: &Configuration,
    overrides: &BTreeMap<usize, RigidCoupling>,
    params: &PlannerParams,
) -> Result<AssignmentMatrix, PlanError> {
    let r = RemainingSet::all(chain);
    let mut stage = Stage::new(chain, spec, &r, x0, overrides, params);
    stage.relevance = Relevance::AllAgents;
    let candidates = stage.assignments(None, params.enumeration_cap)?;
    let sol = solve_waypoints(&stage, Some(&candidates), None, params, &mut WaypointCache::default())?;
    Ok(sol.assignment)
}
