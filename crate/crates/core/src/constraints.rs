//! Keypoint constraint primitives, big-M gating and the rigid transition
//! residual used between consecutive waypoints.
//!
//! Residuals follow the usual convention: a component is satisfied when it
//! is `<= 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assignment::AssignmentMatrix;
use crate::expr::{diff, LinExpr, RowExpr};
use crate::system::{Configuration, SystemSpec};

/// A point a primitive refers to. `Effector` is the end-effector of the
/// agent the constraint copy is evaluated for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRef {
    Agent(usize),
    Keypoint(usize),
    Effector,
    World(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// `|a - b| - d`.
    PointDistanceLe { a: PointRef, b: PointRef, d: f64 },
    /// `d - |a - b|`.
    PointDistanceGe { a: PointRef, b: PointRef, d: f64 },
    /// Rows `lo - (b - a)[axis]` and `(b - a)[axis] - hi`.
    AxisOffsetBetween { a: PointRef, b: PointRef, axis: usize, lo: f64, hi: f64 },
    /// Rows `lo - p` then `p - hi`, one per axis each.
    WithinBox { point: PointRef, lo: Vec<f64>, hi: Vec<f64> },
    /// `|ee - keypoint| - tol`.
    GraspAt { keypoint: usize, tol: f64 },
    /// `d - |ee_i - ee_j|` for every pair of scoped agents.
    ClearanceGe { d: f64 },
}

/// Which agents a constraint applies to.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// No scope; cannot be attributed to any agent.
    #[default]
    Unscoped,
    /// Static agent list.
    Agents(Vec<usize>),
    /// Gated by the agent assigned to `subtask`. `allowed`, when non-empty,
    /// lists the only agents that may take the subtask.
    Subtask {
        subtask: usize,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        allowed: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraint {
    pub primitive: Primitive,
    #[serde(default)]
    pub scope: Scope,
}

/// One evaluated copy of a constraint: the agent bound to `Effector` and the
/// gate entry, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Copy {
    pub effector: Option<usize>,
    pub gate: Option<(usize, usize)>,
}

/// A point after the effector has been bound.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolved<'a> {
    Agent(usize),
    Keypoint(usize),
    World(&'a [f64]),
}

impl Primitive {
    pub fn uses_effector(&self) -> bool {
        match self {
            Primitive::GraspAt { .. } | Primitive::ClearanceGe { .. } => true,
            Primitive::PointDistanceLe { a, b, .. }
            | Primitive::PointDistanceGe { a, b, .. }
            | Primitive::AxisOffsetBetween { a, b, .. } => *a == PointRef::Effector || *b == PointRef::Effector,
            Primitive::WithinBox { point, .. } => *point == PointRef::Effector,
        }
    }

    pub fn keypoints(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut visit = |p: &PointRef| {
            if let PointRef::Keypoint(k) = p {
                out.push(*k);
            }
        };
        match self {
            Primitive::PointDistanceLe { a, b, .. }
            | Primitive::PointDistanceGe { a, b, .. }
            | Primitive::AxisOffsetBetween { a, b, .. } => {
                visit(a);
                visit(b);
            }
            Primitive::WithinBox { point, .. } => visit(point),
            Primitive::GraspAt { keypoint, .. } => out.push(*keypoint),
            Primitive::ClearanceGe { .. } => {}
        }
        out
    }

    pub fn agents(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut visit = |p: &PointRef| {
            if let PointRef::Agent(j) = p {
                out.push(*j);
            }
        };
        match self {
            Primitive::PointDistanceLe { a, b, .. }
            | Primitive::PointDistanceGe { a, b, .. }
            | Primitive::AxisOffsetBetween { a, b, .. } => {
                visit(a);
                visit(b);
            }
            Primitive::WithinBox { point, .. } => visit(point),
            _ => {}
        }
        out
    }

    /// Builds the rows of one copy. `resolve` maps a point to one affine
    /// expression per coordinate.
    pub fn rows<'a>(
        &'a self,
        effector: Option<usize>,
        scope_agents: &[usize],
        resolve: &mut dyn FnMut(Resolved<'a>) -> Vec<LinExpr>,
    ) -> Vec<RowExpr> {
        let point = |p: &'a PointRef, resolve: &mut dyn FnMut(Resolved<'a>) -> Vec<LinExpr>| match p {
            PointRef::Agent(j) => resolve(Resolved::Agent(*j)),
            PointRef::Keypoint(k) => resolve(Resolved::Keypoint(*k)),
            PointRef::World(w) => resolve(Resolved::World(w)),
            PointRef::Effector => resolve(Resolved::Agent(effector.expect("effector is not bound for this copy"))),
        };
        match self {
            Primitive::PointDistanceLe { a, b, d } => {
                let u = diff(&point(a, resolve), &point(b, resolve));
                vec![RowExpr::Norm { diff: u, sign: 1.0, c: -d }]
            }
            Primitive::PointDistanceGe { a, b, d } => {
                let u = diff(&point(a, resolve), &point(b, resolve));
                vec![RowExpr::Norm { diff: u, sign: -1.0, c: *d }]
            }
            Primitive::AxisOffsetBetween { a, b, axis, lo, hi } => {
                let pa = point(a, resolve);
                let pb = point(b, resolve);
                let off = pb[*axis].add_scaled(&pa[*axis], -1.0);
                vec![RowExpr::Affine(off.scaled(-1.0).shifted(*lo)), RowExpr::Affine(off.shifted(-hi))]
            }
            Primitive::WithinBox { point: p, lo, hi } => {
                let e = point(p, resolve);
                let mut rows: Vec<RowExpr> =
                    e.iter().zip(lo).map(|(x, l)| RowExpr::Affine(x.scaled(-1.0).shifted(*l))).collect();
                rows.extend(e.iter().zip(hi).map(|(x, h)| RowExpr::Affine(x.clone().shifted(-h))));
                rows
            }
            Primitive::GraspAt { keypoint, tol } => {
                let ee = resolve(Resolved::Agent(effector.expect("effector is not bound for this copy")));
                let kp = resolve(Resolved::Keypoint(*keypoint));
                vec![RowExpr::Norm { diff: diff(&ee, &kp), sign: 1.0, c: -tol }]
            }
            Primitive::ClearanceGe { d } => {
                let mut rows = Vec::new();
                for (i, &ja) in scope_agents.iter().enumerate() {
                    for &jb in &scope_agents[i + 1..] {
                        let u = diff(&resolve(Resolved::Agent(ja)), &resolve(Resolved::Agent(jb)));
                        rows.push(RowExpr::Norm { diff: u, sign: -1.0, c: *d });
                    }
                }
                rows
            }
        }
    }
}

impl Constraint {
    pub fn new(primitive: Primitive, scope: Scope) -> Self {
        Self { primitive, scope }
    }

    pub fn gated(primitive: Primitive, subtask: usize) -> Self {
        Self { primitive, scope: Scope::Subtask { subtask, allowed: Vec::new() } }
    }

    pub fn for_agents(primitive: Primitive, agents: Vec<usize>) -> Self {
        Self { primitive, scope: Scope::Agents(agents) }
    }

    pub fn subtask(&self) -> Option<usize> {
        match &self.scope {
            Scope::Subtask { subtask, .. } => Some(*subtask),
            _ => None,
        }
    }

    /// Copies evaluated for a system with `m` agents, in output order.
    pub fn copies(&self, m: usize) -> Vec<Copy> {
        match &self.scope {
            Scope::Unscoped => vec![Copy { effector: None, gate: None }],
            Scope::Agents(list) => {
                if self.primitive.uses_effector() && !matches!(self.primitive, Primitive::ClearanceGe { .. }) {
                    list.iter().map(|&j| Copy { effector: Some(j), gate: None }).collect()
                } else {
                    vec![Copy { effector: None, gate: None }]
                }
            }
            Scope::Subtask { subtask, .. } => {
                (0..m).map(|j| Copy { effector: Some(j), gate: Some((*subtask, j)) }).collect()
            }
        }
    }

    pub fn scope_agents(&self) -> &[usize] {
        match &self.scope {
            Scope::Agents(list) => list,
            _ => &[],
        }
    }

    /// Rows of one copy over a flat configuration vector whose layout is
    /// given by `spec`.
    pub fn copy_rows(&self, copy: Copy, spec: &SystemSpec) -> Vec<RowExpr> {
        let dim = spec.dim();
        let mut resolve = |r: Resolved<'_>| -> Vec<LinExpr> {
            match r {
                Resolved::Agent(j) => (0..dim).map(|d| LinExpr::var(spec.agent_offset(j) + d)).collect(),
                Resolved::Keypoint(p) => (0..dim).map(|d| LinExpr::var(spec.keypoint_offset(p) + d)).collect(),
                Resolved::World(w) => w.iter().map(|&v| LinExpr::constant(v)).collect(),
            }
        };
        self.primitive.rows(copy.effector, self.scope_agents(), &mut resolve)
    }
}

fn gate_offset(copy: &Copy, a: &AssignmentMatrix, m_big: f64) -> f64 {
    match copy.gate {
        Some((k, j)) => -m_big * (1.0 - f64::from(a.entry(k, j))),
        None => 0.0,
    }
}

/// Residual vector of `c` at `x`. Gated copies are shifted by
/// `-m_big * (1 - A(k, j))`.
pub fn eval(c: &Constraint, a: &AssignmentMatrix, x: &Configuration, spec: &SystemSpec, m_big: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for copy in c.copies(spec.num_agents()) {
        let off = gate_offset(&copy, a, m_big);
        out.extend(c.copy_rows(copy, spec).iter().map(|r| r.eval(x.as_slice()) + off));
    }
    out
}

/// Jacobian of [`eval`] with respect to the flat configuration, `A` held
/// fixed. Coincident points in a norm give a zero row.
pub fn eval_gradient(c: &Constraint, _a: &AssignmentMatrix, x: &Configuration, spec: &SystemSpec) -> DMatrix<f64> {
    let rows: Vec<RowExpr> = c.copies(spec.num_agents()).into_iter().flat_map(|copy| c.copy_rows(copy, spec)).collect();
    let mut jac = DMatrix::zeros(rows.len(), spec.total_dim());
    for (i, r) in rows.iter().enumerate() {
        r.gradient(x.as_slice(), |j, v| jac[(i, j)] += v);
    }
    jac
}

/// Largest residual component of a constraint list, or `-inf` if empty.
pub fn max_residual<'c>(
    cs: impl IntoIterator<Item = &'c Constraint>,
    a: &AssignmentMatrix,
    x: &Configuration,
    spec: &SystemSpec,
    m_big: f64,
) -> f64 {
    cs.into_iter().flat_map(|c| eval(c, a, x, spec, m_big)).fold(f64::NEG_INFINITY, f64::max)
}

/// Who moves a carried keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Carrier {
    Subtask(usize),
    Agent(usize),
}

/// How a keypoint relates between the two endpoints of an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointMode {
    /// No relation (another transition may be moving it concurrently).
    #[default]
    Free,
    /// Stays where it is.
    Fixed,
    /// Translates with the carrying agent.
    Carried(Carrier),
}

/// Per-edge keypoint modes, indexed by keypoint id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidCoupling {
    pub modes: Vec<KeypointMode>,
}

impl RigidCoupling {
    pub fn all(mode: KeypointMode, p: usize) -> Self {
        Self { modes: vec![mode; p] }
    }
}

/// Residual of the rigid transition approximation between two waypoint
/// configurations. Equalities are emitted as `+r, -r` pairs per axis.
pub fn rigid_transition_residual(
    rc: &RigidCoupling,
    a: &AssignmentMatrix,
    w_a: &Configuration,
    w_b: &Configuration,
    m_big: f64,
) -> Vec<f64> {
    let dim = w_a.dim();
    let mut out = Vec::new();
    let pair = |r: Vec<f64>, off: f64, out: &mut Vec<f64>| {
        out.extend(r.iter().map(|v| v + off));
        out.extend(r.iter().map(|v| -v + off));
    };
    for (p, mode) in rc.modes.iter().enumerate() {
        let dp: Vec<f64> = (0..dim).map(|d| w_b.keypoint(p)[d] - w_a.keypoint(p)[d]).collect();
        match mode {
            KeypointMode::Free => {}
            KeypointMode::Fixed => pair(dp, 0.0, &mut out),
            KeypointMode::Carried(Carrier::Agent(j)) => {
                let r = (0..dim).map(|d| dp[d] - (w_b.agent(*j)[d] - w_a.agent(*j)[d])).collect();
                pair(r, 0.0, &mut out);
            }
            KeypointMode::Carried(Carrier::Subtask(k)) => {
                for j in 0..w_a.num_agents() {
                    let r = (0..dim).map(|d| dp[d] - (w_b.agent(j)[d] - w_a.agent(j)[d])).collect();
                    pair(r, -m_big * (1.0 - f64::from(a.entry(*k, j))), &mut out);
                }
            }
        }
    }
    out
}
