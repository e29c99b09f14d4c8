//! Closed-loop episodes: control cycle, world step, repeat.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentMatrix;
use crate::constraints::max_residual;
use crate::graph::{node_agents, Goc, Relevance, RemainingSet};
use crate::planner::{
    baseline_assignment, linearize_baseline, mpc_cycle, CycleContext, CycleDiagnostics, CycleMemory, PlannerParams,
};
use crate::scenario::{Scenario, ScenarioError};

use super::world::{step_world, update_attachments, AppliedDisturbance, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Goc,
    /// Total order over the graph with a fixed assignment.
    LinearizedBaseline,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Goc => "goc",
            Method::LinearizedBaseline => "linearized-baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktrackEvent {
    pub t: f64,
    pub cycle: usize,
    /// Node that re-entered the remaining set.
    pub node: usize,
    pub edge: (usize, usize),
    /// Agents whose chains regained the node.
    pub agents: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    /// Flat configuration: agents then keypoints.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeReport {
    pub success: bool,
    pub cycles: usize,
    pub max_cycle_s: f64,
    pub avg_cycle_s: f64,
    /// Summed end-effector arc length in meters.
    pub total_length: f64,
    pub agent_lengths: Vec<f64>,
    pub backtracks: usize,
    pub sim_time: f64,
    pub diagnostics: Vec<CycleDiagnostics>,
    pub first_makespan: Option<f64>,
    pub first_cycle_s: Option<f64>,
    pub backtrack_events: Vec<BacktrackEvent>,
    /// Nodes removed from the remaining set, with the cycle index.
    pub progress_events: Vec<(usize, usize)>,
    pub trajectory: Vec<TrajectoryRow>,
    pub disturbances: Vec<AppliedDisturbance>,
    /// Planner error that ended the episode early.
    pub error: Option<String>,
}

fn sinks_satisfied(
    goc: &Goc,
    a: &AssignmentMatrix,
    w: &WorldState,
    spec: &crate::SystemSpec,
    m_big: f64,
    eps: f64,
) -> bool {
    goc.sinks().into_iter().all(|v| max_residual(&goc.nodes[v].constraints, a, &w.x, spec, m_big) <= eps)
}

/// Runs `scenario` until every node is complete with the terminal
/// constraints satisfied, or until `budget_s` simulated seconds pass.
pub fn run_episode(
    scenario: &Scenario,
    params: &PlannerParams,
    method: Method,
    budget_s: f64,
) -> Result<EpisodeReport, ScenarioError> {
    let loaded = scenario.load()?;
    let spec = &loaded.spec;
    let mut report = EpisodeReport::default();
    let mut w = WorldState::new(loaded.x0.clone(), loaded.v0.clone(), scenario.disturbances.len());
    let record = |w: &WorldState, report: &mut EpisodeReport| {
        report.trajectory.push(TrajectoryRow { t: w.clock, x: w.x.as_slice().to_vec() });
    };
    record(&w, &mut report);

    let (goc, fixed, relevance, overrides) = match method {
        Method::Goc => (loaded.goc.clone(), None, Relevance::Constraints, loaded.overrides.clone()),
        Method::LinearizedBaseline => {
            let chain = linearize_baseline(&loaded.goc);
            let none = Default::default();
            match baseline_assignment(&chain, spec, &loaded.x0, &none, params) {
                Ok(a) => (chain, Some(a), Relevance::AllAgents, none),
                Err(e) => {
                    report.error = Some(e.to_string());
                    return Ok(report);
                }
            }
        }
    };
    let mut ctx = CycleContext::new(&goc, spec, params);
    ctx.overrides = &overrides;
    ctx.obstacles = &scenario.obstacles;
    ctx.relevance = relevance;
    ctx.fixed_assignment = fixed.as_ref();
    let m_big = ctx.m_big();

    let mut r = RemainingSet::all(&goc);
    let mut memory = CycleMemory::default();
    let mut total_s = 0.0;
    let steps = (budget_s / params.dt).round() as usize;
    let mut step = 0;
    loop {
        if r.is_empty() {
            let a = memory.a_prev.clone().unwrap_or_else(|| AssignmentMatrix::empty(spec.num_agents()));
            report.success = sinks_satisfied(&goc, &a, &w, spec, m_big, params.eps);
            if !report.success {
                report.error = Some("all nodes complete but terminal constraints are violated".into());
            }
            break;
        }
        if step >= steps {
            break;
        }
        let t0 = Instant::now();
        let mut attempts = 0;
        let out = loop {
            attempts += 1;
            let before = r.clone();
            let a_prev = memory.a_prev.clone();
            let out = match mpc_cycle(&ctx, &r, &w.x, &w.xdot, &mut memory) {
                Ok(o) => o,
                Err(e) => break Err(e),
            };
            if let Some((node, edge)) = out.diagnostics.backtrack {
                let a = a_prev.expect("backtracking needs a previous assignment");
                let agents = node_agents(&goc, node, &a).unwrap_or_default();
                report.backtrack_events.push(BacktrackEvent { t: w.clock, cycle: report.cycles, node, edge, agents });
                w = update_attachments(w, &before, &out.r, &goc, &a, params.eps);
                r = out.r;
                report.diagnostics.push(out.diagnostics);
                if attempts > goc.len() {
                    break Err(crate::planner::PlanError::Timing("backtracking did not settle".into()));
                }
                continue;
            }
            break Ok((before, out));
        };
        let elapsed = t0.elapsed().as_secs_f64();
        report.cycles += 1;
        total_s += elapsed;
        report.max_cycle_s = report.max_cycle_s.max(elapsed);
        if report.first_cycle_s.is_none() {
            report.first_cycle_s = Some(elapsed);
        }
        let (before, out) = match out {
            Ok(v) => v,
            Err(e) => {
                report.error = Some(e.to_string());
                break;
            }
        };
        if report.first_makespan.is_none() {
            report.first_makespan = Some(out.diagnostics.makespan);
        }
        for &v in &out.diagnostics.progressed {
            report.progress_events.push((report.cycles - 1, v));
        }
        let a = memory.a_prev.clone().expect("a planned cycle records its assignment");
        w = update_attachments(w, &before, &out.r, &goc, &a, params.eps);
        r = out.r;
        let plan = out.plan.expect("planned cycles carry a horizon plan");
        report.diagnostics.push(out.diagnostics);
        w = step_world(w, &plan, params.dt, &scenario.disturbances, params);
        record(&w, &mut report);
        step += 1;
    }
    report.backtracks = report.backtrack_events.len();
    report.avg_cycle_s = if report.cycles > 0 { total_s / report.cycles as f64 } else { 0.0 };
    report.total_length = w.total_length();
    report.agent_lengths = w.arc_length.clone();
    report.sim_time = w.clock;
    report.disturbances = w.applied;
    Ok(report)
}
