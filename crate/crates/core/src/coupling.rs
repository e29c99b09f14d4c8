//! Derives per-edge keypoint modes from the grasp constraints on edges.
//!
//! An edge that holds `GraspAt(p)` carries `p`, and so does any transition
//! that lies inside a carry of `p`, including one already under way.
//! Elsewhere `p` is fixed when every carry of `p` is ordered before or
//! after the transition, and free otherwise, since a concurrent carry may
//! move it.

use std::collections::BTreeMap;

use crate::constraints::{Carrier, Constraint, KeypointMode, Primitive, RigidCoupling, Scope};
use crate::graph::{Goc, RemainingSet, Subgraph};

/// The carrier of `p` named by a grasp in `cs`, if any.
pub fn grasp_carrier(cs: &[Constraint], p: usize) -> Option<Carrier> {
    cs.iter().find_map(|c| match (&c.primitive, &c.scope) {
        (Primitive::GraspAt { keypoint, .. }, Scope::Subtask { subtask, .. }) if *keypoint == p => {
            Some(Carrier::Subtask(*subtask))
        }
        (Primitive::GraspAt { keypoint, .. }, Scope::Agents(list)) if *keypoint == p && !list.is_empty() => {
            Some(Carrier::Agent(list[0]))
        }
        _ => None,
    })
}

/// Edge indices whose constraints carry keypoint `p`.
pub fn carrying_edges(goc: &Goc, p: usize) -> Vec<usize> {
    (0..goc.edges.len()).filter(|&i| grasp_carrier(&goc.edges[i].constraints, p).is_some()).collect()
}

/// Keypoint modes for one cycle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleCoupling {
    /// Keyed by subgraph edge index.
    pub edges: BTreeMap<usize, RigidCoupling>,
    /// Transition from the current state into each frontier node.
    pub entry: BTreeMap<usize, RigidCoupling>,
}

/// Derives modes for every subgraph edge and every frontier entry.
/// `overrides` replaces the derived map of the given edges.
pub fn derive_coupling(
    goc: &Goc,
    r: &RemainingSet,
    sub: &Subgraph,
    num_keypoints: usize,
    overrides: &BTreeMap<usize, RigidCoupling>,
) -> CycleCoupling {
    let reach = goc.reachability();
    let le = |x: usize, y: usize| reach[x][y];
    let carries: Vec<Vec<usize>> = (0..num_keypoints).map(|p| carrying_edges(goc, p)).collect();

    let mut out = CycleCoupling::default();
    for &i in &sub.edges {
        if let Some(rc) = overrides.get(&i) {
            out.edges.insert(i, rc.clone());
            continue;
        }
        let (a, b) = (goc.edges[i].from, goc.edges[i].to);
        let modes = (0..num_keypoints)
            .map(|p| {
                match grasp_carrier(&goc.edges[i].constraints, p).or_else(|| {
                    carries[p].iter().find_map(|&k| {
                        let (c, d) = (goc.edges[k].from, goc.edges[k].to);
                        let inside = r.contains(d) && le(b, d) && (!r.contains(c) || le(c, a));
                        inside.then(|| grasp_carrier(&goc.edges[k].constraints, p)).flatten()
                    })
                }) {
                    Some(c) => KeypointMode::Carried(c),
                    None => {
                        let ordered = carries[p].iter().filter(|&&k| k != i).all(|&k| {
                            let (c, d) = (goc.edges[k].from, goc.edges[k].to);
                            if !r.contains(d) {
                                true
                            } else if !r.contains(c) {
                                le(d, a)
                            } else {
                                le(d, a) || le(b, c)
                            }
                        });
                        if ordered {
                            KeypointMode::Fixed
                        } else {
                            KeypointMode::Free
                        }
                    }
                }
            })
            .collect();
        out.edges.insert(i, RigidCoupling { modes });
    }
    for &v in &sub.frontier {
        let into: Vec<&Constraint> =
            goc.edges.iter().filter(|e| e.to == v && !r.contains(e.from)).flat_map(|e| &e.constraints).collect();
        let into: Vec<Constraint> = into.into_iter().cloned().collect();
        let modes = (0..num_keypoints)
            .map(|p| {
                match grasp_carrier(&into, p).or_else(|| {
                    carries[p].iter().find_map(|&k| {
                        let (c, d) = (goc.edges[k].from, goc.edges[k].to);
                        let under_way = !r.contains(c) && r.contains(d) && le(v, d);
                        under_way.then(|| grasp_carrier(&goc.edges[k].constraints, p)).flatten()
                    })
                }) {
                    Some(c) => KeypointMode::Carried(c),
                    None => {
                        let ordered = carries[p].iter().all(|&k| {
                            let (c, d) = (goc.edges[k].from, goc.edges[k].to);
                            if !r.contains(d) {
                                true
                            } else if !r.contains(c) {
                                false
                            } else {
                                le(v, c)
                            }
                        });
                        if ordered {
                            KeypointMode::Fixed
                        } else {
                            KeypointMode::Free
                        }
                    }
                }
            })
            .collect();
        out.entry.insert(v, RigidCoupling { modes });
    }
    out
}

/// Constraints of the cut edges into `v`.
pub fn entry_constraints(goc: &Goc, r: &RemainingSet, v: usize) -> Vec<Constraint> {
    goc.edges.iter().filter(|e| e.to == v && !r.contains(e.from)).flat_map(|e| e.constraints.iter().cloned()).collect()
}
