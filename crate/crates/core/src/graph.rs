//! Graph-of-constraints data model, validation, subgraph extraction and the
//! traversal that threads agent chains through the remaining nodes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::AssignmentMatrix;
use crate::constraints::{Constraint, PointRef, Primitive, Scope};
use crate::system::SystemSpec;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
}

/// Nodes are identified by their index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Goc {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub subtasks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefKind {
    Node,
    Agent,
    Keypoint,
    Subtask,
}

impl fmt::Display for RefKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RefKind::Node => "node",
            RefKind::Agent => "agent",
            RefKind::Keypoint => "keypoint",
            RefKind::Subtask => "subtask",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("cycle through nodes {0:?}")]
    CycleDetected(Vec<usize>),
    #[error("reference to missing {kind} {id}")]
    DanglingReference { kind: RefKind, id: usize },
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("{0}: constraint uses the effector but has no agent scope or subtask")]
    EffectorWithoutScope(String),
    #[error("{at}: {reason}")]
    Malformed { at: String, reason: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("node {node}: constraint declares neither an agent scope nor a subtask")]
    AmbiguousRelevance { node: usize },
}

impl Goc {
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>, subtasks: usize) -> Self {
        Self { nodes, edges, subtasks }
    }

    /// Unconstrained graph with `n` nodes, mostly for tests.
    pub fn bare(n: usize, edges: &[(usize, usize)]) -> Self {
        Self {
            nodes: vec![Node::default(); n],
            edges: edges.iter().map(|&(from, to)| Edge { from, to, constraints: Vec::new() }).collect(),
            subtasks: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn successors(&self, v: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.edges.iter().filter(|e| e.from == v).map(|e| e.to).collect();
        s.sort_unstable();
        s
    }

    pub fn predecessors(&self, v: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.edges.iter().filter(|e| e.to == v).map(|e| e.from).collect();
        s.sort_unstable();
        s
    }

    /// Nodes without outgoing edges.
    pub fn sinks(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.edges.iter().all(|e| e.from != v)).collect()
    }

    /// `reach[a][b]` is true when `b` is reachable from `a` (reflexive).
    pub fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.len();
        let mut reach = vec![vec![false; n]; n];
        for order in lexicographic_topo(self).iter().rev() {
            let v = *order;
            reach[v][v] = true;
            for w in self.successors(v) {
                for u in 0..n {
                    if reach[w][u] {
                        reach[v][u] = true;
                    }
                }
            }
        }
        reach
    }
}

/// The set `R` of nodes still to be reached.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
pub struct RemainingSet(BTreeSet<usize>);

impl RemainingSet {
    pub fn all(goc: &Goc) -> Self {
        Self((0..goc.len()).collect())
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.contains(&v)
    }

    pub fn insert(&mut self, v: usize) -> bool {
        self.0.insert(v)
    }

    pub fn remove(&mut self, v: usize) -> bool {
        self.0.remove(&v)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<usize> for RemainingSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Induced subgraph on `R`, by reference into the parent graph.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Subgraph {
    pub nodes: Vec<usize>,
    /// Indices into the parent's edge list.
    pub edges: Vec<usize>,
    /// Nodes with no predecessor inside the subgraph (`V_next`).
    pub frontier: Vec<usize>,
}

fn check_constraint(c: &Constraint, spec: &SystemSpec, subtasks: usize, at: &str) -> Result<(), ValidationError> {
    let dim = spec.dim();
    let malformed = |reason: String| ValidationError::Malformed { at: at.to_string(), reason };
    let point = |p: &PointRef| -> Result<(), ValidationError> {
        match p {
            PointRef::Agent(j) if *j >= spec.num_agents() => {
                Err(ValidationError::DanglingReference { kind: RefKind::Agent, id: *j })
            }
            PointRef::Keypoint(k) if *k >= spec.num_keypoints() => {
                Err(ValidationError::DanglingReference { kind: RefKind::Keypoint, id: *k })
            }
            PointRef::World(w) if w.len() != dim || w.iter().any(|v| !v.is_finite()) => {
                Err(malformed(format!("world point must have {dim} finite coordinates")))
            }
            _ => Ok(()),
        }
    };
    let nonneg = |d: f64, what: &str| {
        if d.is_finite() && d >= 0.0 {
            Ok(())
        } else {
            Err(malformed(format!("{what} must be finite and non-negative, got {d}")))
        }
    };
    match &c.primitive {
        Primitive::PointDistanceLe { a, b, d } | Primitive::PointDistanceGe { a, b, d } => {
            point(a)?;
            point(b)?;
            nonneg(*d, "distance")?;
        }
        Primitive::AxisOffsetBetween { a, b, axis, lo, hi } => {
            point(a)?;
            point(b)?;
            if *axis >= dim {
                return Err(malformed(format!("axis {axis} out of range")));
            }
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(malformed(format!("offset range [{lo}, {hi}] is invalid")));
            }
        }
        Primitive::WithinBox { point: p, lo, hi } => {
            point(p)?;
            if lo.len() != dim
                || hi.len() != dim
                || lo.iter().zip(hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h))
            {
                return Err(malformed("box bounds must have lo <= hi on every axis".into()));
            }
        }
        Primitive::GraspAt { keypoint, tol } => {
            point(&PointRef::Keypoint(*keypoint))?;
            nonneg(*tol, "tolerance")?;
        }
        Primitive::ClearanceGe { d } => {
            nonneg(*d, "clearance")?;
            if !matches!(c.scope, Scope::Agents(_)) {
                return Err(malformed("clearance needs a static agent list".into()));
            }
        }
    }
    match &c.scope {
        Scope::Unscoped if c.primitive.uses_effector() => {
            return Err(ValidationError::EffectorWithoutScope(at.to_string()));
        }
        Scope::Agents(list) => {
            if let Some(&j) = list.iter().find(|&&j| j >= spec.num_agents()) {
                return Err(ValidationError::DanglingReference { kind: RefKind::Agent, id: j });
            }
        }
        Scope::Subtask { subtask, allowed } => {
            if *subtask >= subtasks {
                return Err(ValidationError::DanglingReference { kind: RefKind::Subtask, id: *subtask });
            }
            if let Some(&j) = allowed.iter().find(|&&j| j >= spec.num_agents()) {
                return Err(ValidationError::DanglingReference { kind: RefKind::Agent, id: j });
            }
        }
        Scope::Unscoped => {}
    }
    Ok(())
}

/// Checks edge endpoints, constraint references and acyclicity. The first
/// violation found is returned.
pub fn validate_goc(goc: &Goc, spec: &SystemSpec) -> Result<(), ValidationError> {
    let n = goc.len();
    let mut seen = BTreeSet::new();
    for e in &goc.edges {
        for v in [e.from, e.to] {
            if v >= n {
                return Err(ValidationError::DanglingReference { kind: RefKind::Node, id: v });
            }
        }
        if !seen.insert((e.from, e.to)) {
            return Err(ValidationError::DuplicateEdge(e.from, e.to));
        }
    }
    if let Some(cycle) = find_cycle(goc) {
        return Err(ValidationError::CycleDetected(cycle));
    }
    for (v, node) in goc.nodes.iter().enumerate() {
        for c in &node.constraints {
            check_constraint(c, spec, goc.subtasks, &format!("node {v}"))?;
        }
    }
    for e in &goc.edges {
        for c in &e.constraints {
            check_constraint(c, spec, goc.subtasks, &format!("edge ({}, {})", e.from, e.to))?;
        }
    }
    Ok(())
}

/// Depth-first search from the smallest node id; the witness starts at the
/// smallest id on the cycle.
fn find_cycle(goc: &Goc) -> Option<Vec<usize>> {
    let n = goc.len();
    let succ: Vec<Vec<usize>> = (0..n).map(|v| goc.successors(v)).collect();
    let mut color = vec![0u8; n];
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = 1;
        while let Some(&mut (v, ref mut i)) = stack.last_mut() {
            if *i < succ[v].len() {
                let w = succ[v][*i];
                *i += 1;
                match color[w] {
                    0 => {
                        color[w] = 1;
                        stack.push((w, 0));
                    }
                    1 => {
                        let start = stack.iter().position(|&(u, _)| u == w).unwrap();
                        let mut cyc: Vec<usize> = stack[start..].iter().map(|&(u, _)| u).collect();
                        let min_at = cyc.iter().enumerate().min_by_key(|(_, &u)| u).map(|(k, _)| k).unwrap();
                        cyc.rotate_left(min_at);
                        return Some(cyc);
                    }
                    _ => {}
                }
            } else {
                color[v] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Edges from a completed node into `R`.
pub fn cut_edges(goc: &Goc, r: &RemainingSet) -> Vec<(usize, usize)> {
    goc.edges.iter().filter(|e| !r.contains(e.from) && r.contains(e.to)).map(|e| (e.from, e.to)).collect()
}

/// Indices of the cut edges, in edge-list order.
pub fn cut_edge_indices(goc: &Goc, r: &RemainingSet) -> Vec<usize> {
    (0..goc.edges.len()).filter(|&i| !r.contains(goc.edges[i].from) && r.contains(goc.edges[i].to)).collect()
}

pub fn subgraph(goc: &Goc, r: &RemainingSet) -> Subgraph {
    let nodes: Vec<usize> = r.iter().filter(|&v| v < goc.len()).collect();
    let edges: Vec<usize> =
        (0..goc.edges.len()).filter(|&i| r.contains(goc.edges[i].from) && r.contains(goc.edges[i].to)).collect();
    let frontier = nodes.iter().copied().filter(|&v| edges.iter().all(|&i| goc.edges[i].to != v)).collect();
    Subgraph { nodes, edges, frontier }
}

/// Breadth-first topological order of a subgraph (Kahn with a FIFO queue;
/// nodes released together enter in ascending id order).
pub fn bfs_order(goc: &Goc, sub: &Subgraph) -> Vec<usize> {
    let mut indeg: BTreeMap<usize, usize> = sub.nodes.iter().map(|&v| (v, 0)).collect();
    for &i in &sub.edges {
        *indeg.get_mut(&goc.edges[i].to).unwrap() += 1;
    }
    let mut queue: VecDeque<usize> = sub.frontier.iter().copied().collect();
    let mut order = Vec::with_capacity(sub.nodes.len());
    while let Some(v) = queue.pop_front() {
        order.push(v);
        let mut released = Vec::new();
        for &i in &sub.edges {
            if goc.edges[i].from == v {
                let d = indeg.get_mut(&goc.edges[i].to).unwrap();
                *d -= 1;
                if *d == 0 {
                    released.push(goc.edges[i].to);
                }
            }
        }
        released.sort_unstable();
        queue.extend(released);
    }
    order
}

/// Lexicographically smallest topological order of the whole graph.
pub fn lexicographic_topo(goc: &Goc) -> Vec<usize> {
    let n = goc.len();
    let mut indeg = vec![0usize; n];
    for e in &goc.edges {
        indeg[e.to] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for w in goc.successors(v) {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.insert(w);
            }
        }
    }
    order
}

/// How node relevance is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Relevance {
    /// From constraint scopes and the assignment.
    #[default]
    Constraints,
    /// Every node involves every agent (joint-agent baseline).
    AllAgents,
}

/// Agents a single constraint involves under assignment `a`.
pub fn constraint_agents(c: &Constraint, a: &AssignmentMatrix) -> Option<BTreeSet<usize>> {
    let mut out: BTreeSet<usize> = c.primitive.agents().into_iter().collect();
    match &c.scope {
        Scope::Agents(list) => out.extend(list.iter().copied()),
        Scope::Subtask { subtask, .. } => {
            out.insert(a.agent(*subtask));
        }
        Scope::Unscoped if out.is_empty() => return None,
        Scope::Unscoped => {}
    }
    Some(out)
}

/// Agents relevant to node `v`: those of its own constraints and of every
/// incident edge.
pub fn node_agents(goc: &Goc, v: usize, a: &AssignmentMatrix) -> Result<BTreeSet<usize>, PathError> {
    let mut out = BTreeSet::new();
    let incident = goc.edges.iter().filter(|e| e.from == v || e.to == v).flat_map(|e| &e.constraints);
    for c in goc.nodes[v].constraints.iter().chain(incident) {
        out.extend(constraint_agents(c, a).ok_or(PathError::AmbiguousRelevance { node: v })?);
    }
    Ok(out)
}

/// `(j_a, l_a, j_b, l_b)`: position `l_a` of agent `j_a`'s chain and
/// position `l_b` of agent `j_b`'s chain.
pub type ChainLink = (usize, usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AgentPathPlan {
    /// Per-agent ordered node lists.
    pub chains: Vec<Vec<usize>>,
    /// `E_≤`: the first must be reached no later than the second.
    pub order: Vec<ChainLink>,
    /// `E_=`: reached at the same time.
    pub sync: Vec<ChainLink>,
    /// Traversal order of the subgraph.
    pub traversal: Vec<usize>,
    /// Subgraph nodes no agent is relevant to.
    pub agentless: Vec<usize>,
}

impl AgentPathPlan {
    pub fn position(&self, j: usize, v: usize) -> Option<usize> {
        self.chains[j].iter().position(|&u| u == v)
    }
}

/// Threads one chain per agent through the subgraph in breadth-first
/// topological order and extracts the cross-agent timing constraints.
pub fn agent_paths(
    goc: &Goc,
    sub: &Subgraph,
    a: &AssignmentMatrix,
    mode: Relevance,
) -> Result<AgentPathPlan, PathError> {
    let m = a.num_agents();
    let traversal = bfs_order(goc, sub);
    let mut rel: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &v in &traversal {
        let js = match mode {
            Relevance::Constraints => node_agents(goc, v, a)?,
            Relevance::AllAgents => (0..m).collect(),
        };
        rel.insert(v, js);
    }
    let mut chains = vec![Vec::new(); m];
    for &v in &traversal {
        for &j in &rel[&v] {
            chains[j].push(v);
        }
    }
    let pos = |j: usize, v: usize| chains[j].iter().position(|&u| u == v).unwrap();
    let mut order = Vec::new();
    for &i in &sub.edges {
        let e = &goc.edges[i];
        let (ja, jb) = (&rel[&e.from], &rel[&e.to]);
        if ja.is_empty() || jb.is_empty() || !ja.is_disjoint(jb) {
            continue;
        }
        let (a0, b0) = (*ja.first().unwrap(), *jb.first().unwrap());
        order.push((a0, pos(a0, e.from), b0, pos(b0, e.to)));
    }
    let mut sync = Vec::new();
    for &v in &traversal {
        let js: Vec<usize> = rel[&v].iter().copied().collect();
        if let Some((&j0, rest)) = js.split_first() {
            for &j in rest {
                sync.push((j0, pos(j0, v), j, pos(j, v)));
            }
        }
    }
    let agentless = traversal.iter().copied().filter(|v| rel[v].is_empty()).collect();
    Ok(AgentPathPlan { chains, order, sync, traversal, agentless })
}
