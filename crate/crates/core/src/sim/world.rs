//! Kinematic world: agents follow commands, attached keypoints ride along.

use crate::assignment::AssignmentMatrix;
use crate::constraints::{Constraint, Primitive, Scope};
use crate::coupling::grasp_carrier;
use crate::graph::{Goc, RemainingSet};
use crate::planner::{HorizonPlan, PlannerParams};
use crate::scenario::{Disturbance, DisturbanceKind};
use crate::system::{dist, Configuration, Velocity};

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub x: Configuration,
    pub xdot: Velocity,
    /// Agent each keypoint is attached to.
    pub attached: Vec<Option<usize>>,
    /// Grasp tolerance recorded when each keypoint was attached.
    pub attach_tol: Vec<f64>,
    pub clock: f64,
    pub frozen_until: Vec<f64>,
    /// Disturbances already applied, by schedule index.
    pub fired: Vec<bool>,
    /// Clock time at which each keypoint was first attached.
    pub attach_time: Vec<Option<f64>>,
    /// Executed end-effector path length per agent.
    pub arc_length: Vec<f64>,
    pub applied: Vec<AppliedDisturbance>,
}

/// A disturbance as it fired.
#[derive(Debug, Clone, PartialEq)]
pub struct AppliedDisturbance {
    pub t: f64,
    /// Index into the schedule.
    pub index: usize,
    /// Agent holding the affected keypoint just before it fired.
    pub holder: Option<usize>,
    /// Whether the keypoint was knocked out of the grasp.
    pub released: bool,
}

impl WorldState {
    pub fn new(x: Configuration, xdot: Velocity, disturbances: usize) -> Self {
        let (m, p) = (x.num_agents(), x.num_keypoints());
        Self {
            x,
            xdot,
            attached: vec![None; p],
            attach_tol: vec![0.0; p],
            clock: 0.0,
            frozen_until: vec![f64::NEG_INFINITY; m],
            fired: vec![false; disturbances],
            attach_time: vec![None; p],
            arc_length: vec![0.0; m],
            applied: Vec::new(),
        }
    }

    pub fn total_length(&self) -> f64 {
        self.arc_length.iter().sum()
    }

    fn grasp_residual(&self, p: usize, j: usize, tol: f64) -> f64 {
        dist(self.x.agent(j), self.x.keypoint(p)) - tol
    }

    fn attach(&mut self, p: usize, j: usize, tol: f64) {
        self.attached[p] = Some(j);
        self.attach_tol[p] = tol;
        self.attach_time[p].get_or_insert(self.clock);
    }
}

fn due(d: &Disturbance, w: &WorldState) -> bool {
    if d.after_grasp {
        match d.event.keypoint().and_then(|p| w.attach_time[p]) {
            Some(t0) => t0 + d.at <= w.clock + 1e-12,
            None => false,
        }
    } else {
        d.at <= w.clock + 1e-12
    }
}

/// Advances the world by `dt_sim`. Each agent moves with the velocity of the
/// plan's first step, every axis clipped to `v_max * dt_sim`, so several
/// substeps of one plan trace the same segment as a single full step.
/// Disturbances due at the current clock are applied after the motion.
pub fn step_world(
    mut w: WorldState,
    plan: &HorizonPlan,
    dt_sim: f64,
    schedule: &[Disturbance],
    params: &PlannerParams,
) -> WorldState {
    let dim = w.x.dim();
    let cmd = plan.command();
    let from = &plan.steps[0];
    let frac = if plan.dt > 0.0 { dt_sim / plan.dt } else { 1.0 };
    let cap = params.v_max * dt_sim;
    for j in 0..w.x.num_agents() {
        let mut delta = vec![0.0; dim];
        if w.frozen_until[j] <= w.clock {
            for d in 0..dim {
                delta[d] = ((cmd[j * dim + d] - from[j * dim + d]) * frac).clamp(-cap, cap);
            }
        }
        for d in 0..dim {
            w.x.agent_mut(j)[d] += delta[d];
            w.xdot.agent_mut(j)[d] = if dt_sim > 0.0 { delta[d] / dt_sim } else { 0.0 };
        }
        w.arc_length[j] += delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        for p in 0..w.x.num_keypoints() {
            if w.attached[p] == Some(j) {
                for d in 0..dim {
                    w.x.keypoint_mut(p)[d] += delta[d];
                    w.xdot.keypoint_mut(p)[d] = w.xdot.agent(j)[d];
                }
            }
        }
    }
    for p in 0..w.x.num_keypoints() {
        if w.attached[p].is_none() {
            w.xdot.keypoint_mut(p).fill(0.0);
        }
    }

    for (i, d) in schedule.iter().enumerate() {
        if w.fired[i] || !due(d, &w) {
            continue;
        }
        w.fired[i] = true;
        let holder = d.event.keypoint().and_then(|p| w.attached[p]);
        match &d.event {
            DisturbanceKind::TeleportKeypoint { keypoint, displacement } => {
                let p = *keypoint;
                for (k, v) in displacement.iter().enumerate() {
                    w.x.keypoint_mut(p)[k] += v;
                }
                if let Some(j) = w.attached[p] {
                    if w.grasp_residual(p, j, w.attach_tol[p]) > params.eps {
                        w.attached[p] = None;
                    }
                }
                log::debug!("t={:.3}: keypoint {p} teleported", w.clock);
            }
            DisturbanceKind::DetachKeypoint { keypoint } => {
                w.attached[*keypoint] = None;
            }
            DisturbanceKind::FreezeAgent { agent, duration } => {
                w.frozen_until[*agent] = w.clock + duration;
            }
        }
        let released = holder.is_some() && d.event.keypoint().is_some_and(|p| w.attached[p].is_none());
        w.applied.push(AppliedDisturbance { t: w.clock, index: i, holder, released });
    }
    w.clock += dt_sim;
    w
}

fn grasp_agent(c: &Constraint, a: &AssignmentMatrix) -> Option<(usize, usize, f64)> {
    let Primitive::GraspAt { keypoint, tol } = c.primitive else {
        return None;
    };
    let j = match &c.scope {
        Scope::Subtask { subtask, .. } => (*subtask < a.num_subtasks()).then(|| a.agent(*subtask))?,
        Scope::Agents(list) => *list.first()?,
        Scope::Unscoped => return None,
    };
    Some((keypoint, j, tol))
}

/// Whether `v` ends a carry of `p`: some carrying edge enters `v` and none
/// leaves it.
fn ends_carry(goc: &Goc, v: usize, p: usize) -> bool {
    let carries = |e: &crate::graph::Edge| grasp_carrier(&e.constraints, p).is_some();
    goc.edges.iter().any(|e| e.to == v && carries(e)) && !goc.edges.iter().any(|e| e.from == v && carries(e))
}

/// Mirrors grasp progress into the world. Completed nodes that end a
/// carry release the keypoint; completed grasp nodes attach their keypoint
/// if the effector is within `eps_attach` of the grasp tolerance; grasp
/// nodes that re-entered `R` release theirs.
pub fn update_attachments(
    mut w: WorldState,
    r_before: &RemainingSet,
    r_after: &RemainingSet,
    goc: &Goc,
    a: &AssignmentMatrix,
    eps_attach: f64,
) -> WorldState {
    for v in r_before.iter().filter(|&v| !r_after.contains(v)) {
        for p in 0..w.x.num_keypoints() {
            if w.attached[p].is_some() && ends_carry(goc, v, p) {
                w.attached[p] = None;
            }
        }
        for c in &goc.nodes[v].constraints {
            if let Some((p, j, tol)) = grasp_agent(c, a) {
                let res = w.grasp_residual(p, j, tol);
                if res <= eps_attach {
                    w.attach(p, j, tol);
                } else {
                    log::warn!("node {v} completed but agent {j} is {res:.4} past the grasp tolerance of keypoint {p}");
                }
            }
        }
    }
    for v in r_after.iter().filter(|&v| !r_before.contains(v)) {
        for c in &goc.nodes[v].constraints {
            if let Primitive::GraspAt { keypoint, .. } = c.primitive {
                w.attached[keypoint] = None;
            }
        }
    }
    w
}
