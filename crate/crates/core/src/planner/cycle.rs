//! One control cycle: backtracking over cut edges, the three subproblems
//! and phase progression.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::assignment::AssignmentMatrix;
use crate::constraints::{eval, Constraint, RigidCoupling};
use crate::graph::{agent_paths, cut_edge_indices, AgentPathPlan, Goc, Relevance, RemainingSet};
use crate::system::{Configuration, SystemSpec, Velocity};

use super::horizon::{solve_horizon, HorizonPlan, Obstacle};
use super::timing::{solve_timing, TimingSolution};
use super::waypoints::{solve_waypoints, Stage, WaypointCache, WaypointSolution};
use super::{PlanError, PlannerParams};

/// What the phase logic needs from the rest of the cycle.
pub trait CycleProbe {
    type Plan;
    /// Largest residual component of edge `e` under the previous assignment.
    fn edge_violation(&mut self, e: usize) -> f64;
    /// Solves the subproblems for `r`.
    fn plan(&mut self, r: &RemainingSet) -> Result<PhasePlan<Self::Plan>, PlanError>;
    /// Largest residual component of node `v` under the new assignment.
    fn node_violation(&mut self, v: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan<T> {
    /// Per agent: first node of its chain and the time to reach it.
    pub next: Vec<Option<(usize, f64)>>,
    /// Frontier nodes no agent is relevant to.
    pub agentless: Vec<usize>,
    pub payload: T,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseOutcome<T> {
    /// A cut edge into `edge.1` was violated and `node` re-entered `R`.
    Backtracked {
        r: RemainingSet,
        node: usize,
        edge: (usize, usize),
    },
    Planned {
        r: RemainingSet,
        progressed: Vec<usize>,
        payload: T,
    },
}

/// Backtracking and progression around a plan. Cut edges are only checked
/// when `check_cuts` is set (there is no previous assignment on the first
/// cycle).
pub fn run_phases<P: CycleProbe>(
    probe: &mut P,
    goc: &Goc,
    r: &RemainingSet,
    params: &PlannerParams,
    check_cuts: bool,
) -> Result<PhaseOutcome<P::Plan>, PlanError> {
    let mut r = r.clone();
    if check_cuts {
        for i in cut_edge_indices(goc, &r) {
            if probe.edge_violation(i) >= params.eps {
                let e = &goc.edges[i];
                r.insert(e.from);
                return Ok(PhaseOutcome::Backtracked { r, node: e.from, edge: (e.from, e.to) });
            }
        }
    }
    let plan = probe.plan(&r)?;
    let mut progressed = Vec::new();
    for &(v, d0) in plan.next.iter().flatten() {
        if d0 <= params.tau && r.contains(v) && probe.node_violation(v) <= params.eps {
            r.remove(v);
            progressed.push(v);
        }
    }
    for &v in &plan.agentless {
        if r.contains(v) && probe.node_violation(v) <= params.eps {
            r.remove(v);
            progressed.push(v);
        }
    }
    Ok(PhaseOutcome::Planned { r, progressed, payload: plan.payload })
}

/// Static inputs of the controller.
#[derive(Debug, Clone)]
pub struct CycleContext<'a> {
    pub goc: &'a Goc,
    pub spec: &'a SystemSpec,
    pub params: &'a PlannerParams,
    pub overrides: &'a BTreeMap<usize, RigidCoupling>,
    pub obstacles: &'a [Obstacle],
    pub relevance: Relevance,
    /// Use this assignment instead of enumerating.
    pub fixed_assignment: Option<&'a AssignmentMatrix>,
}

impl<'a> CycleContext<'a> {
    pub fn new(goc: &'a Goc, spec: &'a SystemSpec, params: &'a PlannerParams) -> Self {
        static NO_OVERRIDES: BTreeMap<usize, RigidCoupling> = BTreeMap::new();
        Self {
            goc,
            spec,
            params,
            overrides: &NO_OVERRIDES,
            obstacles: &[],
            relevance: Relevance::Constraints,
            fixed_assignment: None,
        }
    }

    pub fn m_big(&self) -> f64 {
        self.params.big_m.unwrap_or_else(|| self.spec.default_big_m())
    }
}

/// State carried from one cycle to the next.
#[derive(Debug, Clone, Default)]
pub struct CycleMemory {
    /// Assignment of the last cycle that produced a plan.
    pub a_prev: Option<AssignmentMatrix>,
    pub cache: WaypointCache,
    /// Last waypoint solution, reused when every branch fails.
    pub last: Option<WaypointSolution>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleDiagnostics {
    pub waypoint_s: f64,
    pub timing_s: f64,
    pub horizon_s: f64,
    pub total_s: f64,
    pub branches: usize,
    pub solved: usize,
    pub pruned: usize,
    pub objective: f64,
    pub makespan: f64,
    pub backtrack: Option<(usize, (usize, usize))>,
    pub progressed: Vec<usize>,
    /// The previous waypoints were reused because no branch was feasible.
    pub stale_waypoints: bool,
    pub horizon_fallback: bool,
    pub assignment: Option<AssignmentMatrix>,
}

#[derive(Debug, Clone)]
pub struct CycleOutput {
    /// `None` when the cycle backtracked.
    pub plan: Option<HorizonPlan>,
    pub r: RemainingSet,
    pub diagnostics: CycleDiagnostics,
    pub waypoints: Option<WaypointSolution>,
    pub paths: Option<AgentPathPlan>,
    pub timing: Option<TimingSolution>,
}

struct Payload {
    waypoints: WaypointSolution,
    paths: AgentPathPlan,
    timing: TimingSolution,
}

struct LiveProbe<'c, 'a> {
    ctx: &'c CycleContext<'a>,
    x: &'c Configuration,
    xdot: &'c Velocity,
    memory: &'c mut CycleMemory,
    diag: CycleDiagnostics,
    a_new: Option<AssignmentMatrix>,
}

fn max_violation(cs: &[Constraint], a: &AssignmentMatrix, x: &Configuration, spec: &SystemSpec, m_big: f64) -> f64 {
    cs.iter().flat_map(|c| eval(c, a, x, spec, m_big)).fold(f64::NEG_INFINITY, f64::max)
}

impl CycleProbe for LiveProbe<'_, '_> {
    type Plan = Payload;

    fn edge_violation(&mut self, e: usize) -> f64 {
        let a = self.memory.a_prev.as_ref().expect("cut edges are checked only after a planned cycle");
        max_violation(&self.ctx.goc.edges[e].constraints, a, self.x, self.ctx.spec, self.ctx.m_big())
    }

    fn node_violation(&mut self, v: usize) -> f64 {
        let a = self.a_new.as_ref().expect("node checks follow planning");
        max_violation(&self.ctx.goc.nodes[v].constraints, a, self.x, self.ctx.spec, self.ctx.m_big())
    }

    fn plan(&mut self, r: &RemainingSet) -> Result<PhasePlan<Payload>, PlanError> {
        let ctx = self.ctx;
        let t0 = Instant::now();
        let mut stage = Stage::new(ctx.goc, ctx.spec, r, self.x, ctx.overrides, ctx.params);
        stage.relevance = ctx.relevance;
        let candidates = match ctx.fixed_assignment {
            Some(a) => vec![a.clone()],
            None => stage.assignments(self.memory.a_prev.as_ref(), ctx.params.enumeration_cap)?,
        };
        let warm = self.memory.last.as_ref().map(|s| s.waypoints.clone());
        let sol = match solve_waypoints(&stage, Some(&candidates), warm.as_ref(), ctx.params, &mut self.memory.cache) {
            Ok(s) => s,
            Err(PlanError::AllBranchesInfeasible { branches }) => {
                // Keep moving toward the last feasible waypoints while the
                // disturbance that broke every branch settles.
                let last =
                    self.memory.last.as_ref().filter(|s| stage.sub.nodes.iter().all(|v| s.waypoints.contains_key(v)));
                match last {
                    Some(s) => {
                        self.diag.stale_waypoints = true;
                        let mut s = s.clone();
                        s.waypoints.retain(|v, _| r.contains(*v));
                        s.branches = branches;
                        s
                    }
                    None => return Err(PlanError::AllBranchesInfeasible { branches }),
                }
            }
            Err(e) => return Err(e),
        };
        self.diag.waypoint_s = t0.elapsed().as_secs_f64();
        self.diag.branches = sol.branches;
        self.diag.solved = sol.solved;
        self.diag.pruned = sol.pruned;
        self.diag.objective = sol.objective;

        let t1 = Instant::now();
        let paths = agent_paths(ctx.goc, &stage.sub, &sol.assignment, ctx.relevance)?;
        let timing = solve_timing(&paths, &sol.waypoints, self.x, self.xdot, ctx.params)?;
        self.diag.timing_s = t1.elapsed().as_secs_f64();
        self.diag.makespan = timing.makespan;

        let next = (0..ctx.spec.num_agents())
            .map(|j| paths.chains[j].first().map(|&v| (v, timing.first_delta(j).unwrap_or(0.0))))
            .collect();
        let agentless = paths.agentless.iter().copied().filter(|v| stage.sub.frontier.contains(v)).collect();
        self.a_new = Some(sol.assignment.clone());
        if !self.diag.stale_waypoints {
            self.memory.last = Some(sol.clone());
        }
        Ok(PhasePlan { next, agentless, payload: Payload { waypoints: sol, paths, timing } })
    }
}

/// Runs one control cycle from state `(x, xdot)` with remaining set `r`.
pub fn mpc_cycle(
    ctx: &CycleContext,
    r: &RemainingSet,
    x: &Configuration,
    xdot: &Velocity,
    memory: &mut CycleMemory,
) -> Result<CycleOutput, PlanError> {
    let start = Instant::now();
    if ctx.params.tau <= ctx.params.dt {
        log::warn!("tau {} is not above dt {}; progression may lag", ctx.params.tau, ctx.params.dt);
    }
    let check_cuts = memory.a_prev.is_some();
    let mut probe = LiveProbe { ctx, x, xdot, memory, diag: CycleDiagnostics::default(), a_new: None };
    let outcome = run_phases(&mut probe, ctx.goc, r, ctx.params, check_cuts)?;
    let mut diag = std::mem::take(&mut probe.diag);
    let a_new = probe.a_new.take();
    match outcome {
        PhaseOutcome::Backtracked { r, node, edge } => {
            diag.backtrack = Some((node, edge));
            diag.total_s = start.elapsed().as_secs_f64();
            Ok(CycleOutput { plan: None, r, diagnostics: diag, waypoints: None, paths: None, timing: None })
        }
        PhaseOutcome::Planned { r, progressed, payload } => {
            let t2 = Instant::now();
            let plan = solve_horizon(&payload.timing.splines, x, ctx.obstacles, ctx.spec.workspace(), ctx.params)?;
            diag.horizon_s = t2.elapsed().as_secs_f64();
            diag.horizon_fallback = plan.fallback;
            diag.progressed = progressed;
            diag.assignment = a_new.clone();
            memory.a_prev = a_new;
            diag.total_s = start.elapsed().as_secs_f64();
            Ok(CycleOutput {
                plan: Some(plan),
                r,
                diagnostics: diag,
                waypoints: Some(payload.waypoints),
                paths: Some(payload.paths),
                timing: Some(payload.timing),
            })
        }
    }
}
