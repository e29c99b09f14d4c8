//! Waypoint and assignment problem.
//!
//! Every candidate assignment gives a smooth NLP over the waypoint
//! configurations of the remaining nodes. The objective only involves agent
//! coordinates and separates per agent and axis into a graph Laplacian form,
//! so coordinates an agent is not relevant to are eliminated exactly with a
//! Schur complement. Keypoint coordinates are substituted along the rigid
//! coupling (fixed or carried), and only keypoints no coupling pins become
//! free variables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use goc_solvers::{solve_nlp, NlpOptions, NlpProblem, NlpStart, SolveStatus, SparseRows};
use nalgebra::{DMatrix, DVector};

use crate::assignment::{enumerate_assignments, AssignmentMatrix};
use crate::constraints::{Carrier, Constraint, KeypointMode, Resolved, Scope};
use crate::coupling::{derive_coupling, CycleCoupling};
use crate::expr::{LinExpr, RowExpr};
use crate::graph::{bfs_order, node_agents, subgraph, Goc, Relevance, RemainingSet, Subgraph};
use crate::system::{Aabb, Configuration, SystemSpec};

use super::{par_map, PlanError, PlannerParams};

/// Waypoint configuration per remaining node.
pub type WaypointSet = BTreeMap<usize, Configuration>;

/// Everything the waypoint problem needs about the current cycle.
#[derive(Debug, Clone)]
pub struct Stage<'a> {
    pub goc: &'a Goc,
    pub spec: &'a SystemSpec,
    pub r: RemainingSet,
    pub sub: Subgraph,
    pub coupling: CycleCoupling,
    pub x0: &'a Configuration,
    pub m_big: f64,
    pub relevance: Relevance,
}

impl<'a> Stage<'a> {
    pub fn new(
        goc: &'a Goc,
        spec: &'a SystemSpec,
        r: &RemainingSet,
        x0: &'a Configuration,
        overrides: &BTreeMap<usize, crate::constraints::RigidCoupling>,
        params: &PlannerParams,
    ) -> Self {
        let sub = subgraph(goc, r);
        let coupling = derive_coupling(goc, r, &sub, spec.num_keypoints(), overrides);
        Self {
            goc,
            spec,
            r: r.clone(),
            sub,
            coupling,
            x0,
            m_big: params.big_m.unwrap_or_else(|| spec.default_big_m()),
            relevance: Relevance::Constraints,
        }
    }

    /// Constraints that must hold at the waypoint of `v`, including the
    /// edge constraints of every subgraph edge touching `v` and of the cut
    /// edges into `v`.
    pub fn constraints_at(&self, v: usize) -> Vec<&'a Constraint> {
        let goc = self.goc;
        let mut out: Vec<&Constraint> = goc.nodes[v].constraints.iter().collect();
        for &i in &self.sub.edges {
            let e = &goc.edges[i];
            if e.from == v || e.to == v {
                out.extend(&e.constraints);
            }
        }
        for e in &goc.edges {
            if e.to == v && !self.r.contains(e.from) {
                out.extend(&e.constraints);
            }
        }
        out
    }

    /// Subtasks with a gated constraint somewhere in this cycle's problem.
    pub fn active_subtasks(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for &v in &self.sub.nodes {
            for c in self.constraints_at(v) {
                if let Some(k) = c.subtask() {
                    out.insert(k);
                }
            }
        }
        out
    }

    /// Candidate assignments: active subtasks enumerated, the rest taken
    /// from `base` (or agent 0).
    pub fn assignments(
        &self,
        base: Option<&AssignmentMatrix>,
        cap: usize,
    ) -> Result<Vec<AssignmentMatrix>, crate::assignment::AssignmentError> {
        let k = self.goc.subtasks;
        let m = self.spec.num_agents();
        let active: Vec<usize> = self.active_subtasks().into_iter().collect();
        // Each gated constraint with an explicit agent list restricts its subtask.
        let mut allowed: Vec<Vec<&[usize]>> = vec![Vec::new(); k];
        for c in
            self.goc.nodes.iter().flat_map(|n| &n.constraints).chain(self.goc.edges.iter().flat_map(|e| &e.constraints))
        {
            if let Scope::Subtask { subtask, allowed: list } = &c.scope {
                if !list.is_empty() {
                    allowed[*subtask].push(list);
                }
            }
        }
        let base_of = |s: usize| base.filter(|b| b.num_subtasks() == k).map_or(0, |b| b.agent(s));
        let partial = enumerate_assignments(active.len(), m, cap, |_| true)?;
        let mut out = Vec::with_capacity(partial.len());
        for p in partial {
            let mut full: Vec<usize> = (0..k).map(base_of).collect();
            for (i, &s) in active.iter().enumerate() {
                full[s] = p.agent(i);
            }
            let ok = (0..k).all(|s| allowed[s].iter().all(|list| list.contains(&full[s])));
            if ok {
                out.push(AssignmentMatrix::new(full, m).expect("agent index in range"));
            }
        }
        Ok(out)
    }

    fn carrier_agent(&self, c: Carrier, a: &AssignmentMatrix) -> usize {
        match c {
            Carrier::Subtask(k) => a.agent(k),
            Carrier::Agent(j) => j,
        }
    }

    /// Agents whose coordinates at `v` are decision variables.
    fn variable_agents(&self, v: usize, a: &AssignmentMatrix) -> Result<BTreeSet<usize>, PlanError> {
        let mut js = match self.relevance {
            Relevance::Constraints => node_agents(self.goc, v, a)?,
            Relevance::AllAgents => (0..self.spec.num_agents()).collect(),
        };
        let carried = |rc: &crate::constraints::RigidCoupling, js: &mut BTreeSet<usize>| {
            for m in &rc.modes {
                if let KeypointMode::Carried(c) = m {
                    js.insert(self.carrier_agent(*c, a));
                }
            }
        };
        if let Some(rc) = self.coupling.entry.get(&v) {
            carried(rc, &mut js);
        }
        for (&i, rc) in &self.coupling.edges {
            let e = &self.goc.edges[i];
            if e.from == v || e.to == v {
                carried(rc, &mut js);
            }
        }
        Ok(js)
    }
}

/// Elimination of the coordinates of nodes an agent is not relevant to.
/// With `L` the weighted Laplacian of the subgraph plus the frontier
/// anchors, one agent axis contributes `wᵀ L w - 2 x0 indᵀ w + |front| x0²`.
#[derive(Debug)]
struct Schur {
    irr: Vec<usize>,
    s: DMatrix<f64>,
    b: DVector<f64>,
    c: f64,
    /// `L_II⁻¹ L_IR`.
    recon: DMatrix<f64>,
    /// `L_II⁻¹ ind_I`.
    inv_ind: DVector<f64>,
}

fn laplacian(stage: &Stage) -> (DMatrix<f64>, DVector<f64>) {
    let idx: HashMap<usize, usize> = stage.sub.nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let n = stage.sub.nodes.len();
    let mut l = DMatrix::zeros(n, n);
    let mut ind = DVector::zeros(n);
    for &e in &stage.sub.edges {
        let (a, b) = (idx[&stage.goc.edges[e].from], idx[&stage.goc.edges[e].to]);
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
        l[(a, b)] -= 1.0;
        l[(b, a)] -= 1.0;
    }
    for v in &stage.sub.frontier {
        l[(idx[v], idx[v])] += 1.0;
        ind[idx[v]] = 1.0;
    }
    (l, ind)
}

fn schur(l: &DMatrix<f64>, ind: &DVector<f64>, rel: Vec<usize>) -> Schur {
    let n = l.nrows();
    let irr: Vec<usize> = (0..n).filter(|i| !rel.contains(i)).collect();
    let sub = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| l[(rows[i], cols[j])]);
    let l_rr = sub(&rel, &rel);
    let l_ri = sub(&rel, &irr);
    let ind_r = DVector::from_iterator(rel.len(), rel.iter().map(|&i| ind[i]));
    let ind_i = DVector::from_iterator(irr.len(), irr.iter().map(|&i| ind[i]));
    let front = ind.sum();
    if irr.is_empty() {
        return Schur { irr, s: l_rr, b: ind_r, c: front, recon: DMatrix::zeros(0, 0), inv_ind: DVector::zeros(0) };
    }
    let l_ii = sub(&irr, &irr);
    let chol = l_ii.cholesky().expect("every component of the subgraph has a frontier node");
    let recon = chol.solve(&l_ri.transpose());
    let inv_ind = chol.solve(&ind_i);
    let s = &l_rr - &l_ri * &recon;
    let b = &ind_r - &l_ri * &inv_ind;
    let c = front - ind_i.dot(&inv_ind);
    let s = (&s + s.transpose()) * 0.5;
    Schur { irr, s, b, c, recon, inv_ind }
}

/// Objective block of one agent axis.
#[derive(Debug, Clone)]
struct Block {
    agent: usize,
    cols: Vec<usize>,
    schur: Arc<Schur>,
    x0: f64,
}

impl Block {
    fn value(&self, x: &[f64]) -> f64 {
        let s = &self.schur;
        let mut v = self.x0 * self.x0 * s.c;
        for (r, &cr) in self.cols.iter().enumerate() {
            v -= 2.0 * self.x0 * s.b[r] * x[cr];
            for (q, &cq) in self.cols.iter().enumerate() {
                v += s.s[(r, q)] * x[cr] * x[cq];
            }
        }
        v
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let s = &self.schur;
        for (r, &cr) in self.cols.iter().enumerate() {
            let mut d = -2.0 * self.x0 * s.b[r];
            for (q, &cq) in self.cols.iter().enumerate() {
                d += 2.0 * s.s[(r, q)] * x[cq];
            }
            g[cr] += d;
        }
    }

    fn hessian(&self, h: &mut DMatrix<f64>) {
        for (r, &cr) in self.cols.iter().enumerate() {
            for (q, &cq) in self.cols.iter().enumerate() {
                h[(cr, cq)] += 2.0 * self.schur.s[(r, q)];
            }
        }
    }
}

/// One assignment's NLP.
#[derive(Debug, Clone)]
struct BranchNlp {
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<RowExpr>,
    blocks: Vec<Block>,
}

impl NlpProblem for BranchNlp {
    fn dim(&self) -> usize {
        self.lower.len()
    }
    fn num_constraints(&self) -> usize {
        self.rows.len()
    }
    fn lower(&self) -> &[f64] {
        &self.lower
    }
    fn upper(&self) -> &[f64] {
        &self.upper
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.blocks.iter().map(|b| b.value(x)).sum()
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.fill(0.0);
        for b in &self.blocks {
            b.gradient(x, grad);
        }
    }
    fn constraints(&self, x: &[f64], g: &mut [f64]) {
        for (gi, r) in g.iter_mut().zip(&self.rows) {
            *gi = r.eval(x);
        }
    }
    fn jacobian(&self, x: &[f64], jac: &mut SparseRows) {
        jac.clear();
        for r in &self.rows {
            r.gradient(x, |j, v| jac.push(j, v));
            jac.finish_row();
        }
    }
    fn lagrangian_hessian(&self, x: &[f64], mult: &[f64], h: &mut DMatrix<f64>) -> bool {
        for b in &self.blocks {
            b.hessian(h);
        }
        for (r, &w) in self.rows.iter().zip(mult) {
            if w != 0.0 {
                r.add_hessian(x, w, h);
            }
        }
        true
    }
}

/// A compiled branch: the NLP plus the maps back to configurations.
#[derive(Debug, Clone)]
struct Compiled {
    nlp: BranchNlp,
    /// First column of the coordinates of agent `j` at node `v`.
    ee: BTreeMap<(usize, usize), usize>,
    /// Coordinates of keypoint `p` at node `v`.
    kp: BTreeMap<(usize, usize), Vec<LinExpr>>,
    /// Columns of each agent, for the relaxation bound.
    agent_cols: Vec<BTreeSet<usize>>,
    init: Vec<f64>,
}

/// A norm bounded by zero is an equality of its argument.
fn push_row(rows: &mut Vec<RowExpr>, row: RowExpr) {
    match row {
        RowExpr::Norm { diff, sign, c } if sign > 0.0 && c.abs() <= 1e-12 => {
            for e in diff {
                rows.push(RowExpr::Affine(e.scaled(-1.0)));
                rows.push(RowExpr::Affine(e));
            }
        }
        r => rows.push(r),
    }
}

fn compile(
    stage: &Stage,
    a: &AssignmentMatrix,
    schurs: &HashMap<Vec<usize>, Arc<Schur>>,
    rel_nodes: &[Vec<usize>],
    warm: Option<&WaypointSet>,
) -> Compiled {
    let spec = stage.spec;
    let dim = spec.dim();
    let m = spec.num_agents();
    let x0 = stage.x0;
    let nodes = &stage.sub.nodes;

    let mut ee = BTreeMap::new();
    let mut init = Vec::new();
    let mut agent_cols = vec![BTreeSet::new(); m];
    let mut blocks = Vec::new();
    for j in 0..m {
        let rel = &rel_nodes[j];
        if rel.is_empty() {
            continue;
        }
        let base = init.len();
        for (r, &i) in rel.iter().enumerate() {
            let v = nodes[i];
            ee.insert((v, j), base + r * dim);
            let src = warm.and_then(|w| w.get(&v)).map_or(x0.agent(j), |c| c.agent(j));
            init.extend_from_slice(src);
            agent_cols[j].extend(base + r * dim..base + (r + 1) * dim);
        }
        let schur = schurs[rel].clone();
        for d in 0..dim {
            let cols = (0..rel.len()).map(|r| base + r * dim + d).collect();
            blocks.push(Block { agent: j, cols, schur: schur.clone(), x0: x0.agent(j)[d] });
        }
    }
    let n_ee = init.len();

    let ee_expr = |v: usize, j: usize| -> Vec<LinExpr> {
        let c = *ee.get(&(v, j)).unwrap_or_else(|| panic!("agent {j} has no variable at node {v}"));
        (0..dim).map(|d| LinExpr::var(c + d)).collect()
    };
    let x0_ee = |j: usize| -> Vec<LinExpr> { x0.agent(j).iter().map(|&v| LinExpr::constant(v)).collect() };
    let add = |a: &[LinExpr], b: &[LinExpr], s: f64| -> Vec<LinExpr> {
        a.iter().zip(b).map(|(x, y)| x.add_scaled(y, s)).collect()
    };

    let mut rows: Vec<RowExpr> = Vec::new();
    let mut kp: BTreeMap<(usize, usize), Vec<LinExpr>> = BTreeMap::new();
    let mut roots: Vec<(usize, usize, usize)> = Vec::new();
    let order = bfs_order(stage.goc, &stage.sub);
    for &v in &order {
        for p in 0..spec.num_keypoints() {
            let mut cands: Vec<Vec<LinExpr>> = Vec::new();
            if let Some(rc) = stage.coupling.entry.get(&v) {
                let here: Vec<LinExpr> = x0.keypoint(p).iter().map(|&c| LinExpr::constant(c)).collect();
                match rc.modes[p] {
                    KeypointMode::Free => {}
                    KeypointMode::Fixed => cands.push(here),
                    KeypointMode::Carried(c) => {
                        let j = stage.carrier_agent(c, a);
                        cands.push(add(&add(&here, &ee_expr(v, j), 1.0), &x0_ee(j), -1.0));
                    }
                }
            }
            for &i in &stage.sub.edges {
                let e = &stage.goc.edges[i];
                if e.to != v {
                    continue;
                }
                let prev = &kp[&(e.from, p)];
                match stage.coupling.edges[&i].modes[p] {
                    KeypointMode::Free => {}
                    KeypointMode::Fixed => cands.push(prev.clone()),
                    KeypointMode::Carried(c) => {
                        let j = stage.carrier_agent(c, a);
                        cands.push(add(&add(prev, &ee_expr(v, j), 1.0), &ee_expr(e.from, j), -1.0));
                    }
                }
            }
            let expr = if cands.is_empty() {
                let col = init.len();
                let src = warm.and_then(|w| w.get(&v)).map_or(x0.keypoint(p), |c| c.keypoint(p));
                init.extend_from_slice(src);
                roots.push((v, p, col));
                (0..dim).map(|d| LinExpr::var(col + d)).collect()
            } else {
                let first = cands[0].clone();
                for other in &cands[1..] {
                    for (x, y) in first.iter().zip(other) {
                        let e = x.add_scaled(y, -1.0);
                        rows.push(RowExpr::Affine(e.scaled(-1.0)));
                        rows.push(RowExpr::Affine(e));
                    }
                }
                first
            };
            kp.insert((v, p), expr);
        }
    }

    for &v in nodes {
        for c in stage.constraints_at(v) {
            for copy in c.copies(m) {
                if let Some((k, j)) = copy.gate {
                    if a.agent(k) != j {
                        continue;
                    }
                }
                let mut resolve = |r: Resolved<'_>| -> Vec<LinExpr> {
                    match r {
                        Resolved::Agent(j) => ee_expr(v, j),
                        Resolved::Keypoint(p) => kp[&(v, p)].clone(),
                        Resolved::World(w) => w.iter().map(|&c| LinExpr::constant(c)).collect(),
                    }
                };
                for row in c.primitive.rows(copy.effector, c.scope_agents(), &mut resolve) {
                    push_row(&mut rows, row);
                }
            }
        }
    }

    // Drop keypoint roots nothing constrains; they keep their start value.
    let used: BTreeSet<usize> = rows.iter().flat_map(|r| r.columns()).collect();
    let mut remap: Vec<Option<usize>> = (0..init.len()).map(Some).collect();
    let mut next = n_ee;
    let mut kept_init = init[..n_ee].to_vec();
    for &(_, _, col) in &roots {
        let live = (0..dim).any(|d| used.contains(&(col + d)));
        for d in 0..dim {
            if live {
                remap[col + d] = Some(next + d);
                kept_init.push(init[col + d]);
            } else {
                remap[col + d] = None;
            }
        }
        if live {
            next += dim;
        }
    }
    let subst = |e: &LinExpr| -> LinExpr {
        let mut out = LinExpr::constant(e.c);
        for &(j, v) in &e.terms {
            match remap[j] {
                Some(k) => out.terms.push((k, v)),
                None => out.c += v * init[j],
            }
        }
        out
    };
    let rows: Vec<RowExpr> = rows
        .into_iter()
        .map(|r| match r {
            RowExpr::Affine(e) => RowExpr::Affine(subst(&e)),
            RowExpr::Norm { diff, sign, c } => RowExpr::Norm { diff: diff.iter().map(subst).collect(), sign, c },
        })
        .collect();
    let kp = kp.into_iter().map(|(key, e)| (key, e.iter().map(subst).collect())).collect();

    let mut bounds = spec.workspace().clone();
    for j in 0..m {
        bounds = bounds.expanded_to(x0.agent(j));
    }
    for p in 0..spec.num_keypoints() {
        bounds = bounds.expanded_to(x0.keypoint(p));
    }
    let n = kept_init.len();
    let lower = (0..n).map(|i| bounds.lo[i_axis(i, n_ee, dim)]).collect();
    let upper = (0..n).map(|i| bounds.hi[i_axis(i, n_ee, dim)]).collect();
    let init = kept_init.iter().enumerate().map(|(i, &v)| clamp_to(&bounds, i_axis(i, n_ee, dim), v)).collect();
    Compiled { nlp: BranchNlp { lower, upper, rows, blocks }, ee, kp, agent_cols, init }
}

/// Both agent and keypoint blocks are laid out axis-minor.
fn i_axis(i: usize, n_ee: usize, dim: usize) -> usize {
    if i < n_ee {
        i % dim
    } else {
        (i - n_ee) % dim
    }
}

fn clamp_to(b: &Aabb, axis: usize, v: f64) -> f64 {
    v.max(b.lo[axis]).min(b.hi[axis])
}

impl Compiled {
    fn waypoints(
        &self,
        stage: &Stage,
        x: &[f64],
        rel_nodes: &[Vec<usize>],
        schurs: &HashMap<Vec<usize>, Arc<Schur>>,
    ) -> WaypointSet {
        let spec = stage.spec;
        let dim = spec.dim();
        let nodes = &stage.sub.nodes;
        let mut w: WaypointSet = nodes.iter().map(|&v| (v, Configuration::zeros(spec))).collect();
        for j in 0..spec.num_agents() {
            let rel = &rel_nodes[j];
            if rel.is_empty() {
                for c in w.values_mut() {
                    c.agent_mut(j).copy_from_slice(stage.x0.agent(j));
                }
                continue;
            }
            let s = &schurs[rel];
            for d in 0..dim {
                let wr = DVector::from_iterator(rel.len(), rel.iter().map(|&i| x[self.ee[&(nodes[i], j)] + d]));
                for (r, &i) in rel.iter().enumerate() {
                    w.get_mut(&nodes[i]).unwrap().agent_mut(j)[d] = wr[r];
                }
                if !s.irr.is_empty() {
                    let wi = &s.inv_ind * stage.x0.agent(j)[d] - &s.recon * &wr;
                    for (q, &i) in s.irr.iter().enumerate() {
                        w.get_mut(&nodes[i]).unwrap().agent_mut(j)[d] = wi[q];
                    }
                }
            }
        }
        for ((v, p), e) in &self.kp {
            let c = w.get_mut(v).unwrap();
            for (d, ed) in e.iter().enumerate() {
                c.keypoint_mut(*p)[d] = ed.eval(x);
            }
        }
        w
    }

    /// The agent's share of the objective subject to the convex rows that
    /// only touch that agent's columns.
    fn relaxation(&self, j: usize) -> BranchNlp {
        let cols = &self.agent_cols[j];
        let list: Vec<usize> = cols.iter().copied().collect();
        let pos: HashMap<usize, usize> = list.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let local = |e: &LinExpr| LinExpr { terms: e.terms.iter().map(|&(c, v)| (pos[&c], v)).collect(), c: e.c };
        let rows = self
            .nlp
            .rows
            .iter()
            .filter(|r| r.is_convex() && !r.columns().is_empty() && r.columns().iter().all(|c| cols.contains(c)))
            .map(|r| match r {
                RowExpr::Affine(e) => RowExpr::Affine(local(e)),
                RowExpr::Norm { diff, sign, c } => {
                    RowExpr::Norm { diff: diff.iter().map(local).collect(), sign: *sign, c: *c }
                }
            })
            .collect();
        let blocks = self
            .nlp
            .blocks
            .iter()
            .filter(|b| b.agent == j)
            .map(|b| Block { cols: b.cols.iter().map(|c| pos[c]).collect(), ..b.clone() })
            .collect();
        BranchNlp {
            lower: list.iter().map(|&c| self.nlp.lower[c]).collect(),
            upper: list.iter().map(|&c| self.nlp.upper[c]).collect(),
            rows,
            blocks,
        }
    }

    fn relaxation_start(&self, j: usize) -> Vec<f64> {
        self.agent_cols[j].iter().map(|&c| self.init[c]).collect()
    }
}

/// Result of the waypoint stage.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointSolution {
    pub waypoints: WaypointSet,
    pub assignment: AssignmentMatrix,
    pub objective: f64,
    /// Assignments considered.
    pub branches: usize,
    /// Branch NLPs solved.
    pub solved: usize,
    /// Branches skipped by the relaxation bound.
    pub pruned: usize,
}

/// Per-branch solver state carried between cycles.
#[derive(Debug, Clone)]
struct Memo {
    start: NlpStart,
    waypoints: WaypointSet,
}

/// Warm starts for the waypoint stage. Starts from the same remaining set
/// reuse the solver state of each assignment; otherwise the previous
/// waypoints of that assignment seed the new layout.
#[derive(Debug, Clone, Default)]
pub struct WaypointCache {
    r: Option<RemainingSet>,
    memo: HashMap<AssignmentMatrix, Memo>,
}

impl WaypointCache {
    pub fn clear(&mut self) {
        self.r = None;
        self.memo.clear();
    }
}

fn nlp_options() -> NlpOptions {
    NlpOptions { feas_tol: 1e-7, opt_tol: 1e-6, max_outer: 40, max_inner: 100, ..NlpOptions::default() }
}

struct Branch {
    a: AssignmentMatrix,
    rel_nodes: Vec<Vec<usize>>,
    compiled: Compiled,
}

/// Solves the waypoint problem over `assignments` (all candidates of the
/// stage when `None`) and returns the lowest objective among branches that
/// reach an optimal status, ties broken by the assignment order.
pub fn solve_waypoints(
    stage: &Stage,
    assignments: Option<&[AssignmentMatrix]>,
    warm: Option<&WaypointSet>,
    params: &PlannerParams,
    cache: &mut WaypointCache,
) -> Result<WaypointSolution, PlanError> {
    let spec = stage.spec;
    let m = spec.num_agents();
    let candidates = match assignments {
        Some(list) => list.to_vec(),
        None => stage.assignments(None, params.enumeration_cap)?,
    };
    if stage.sub.nodes.is_empty() {
        let a = candidates.into_iter().next().unwrap_or_else(|| AssignmentMatrix::empty(m));
        return Ok(WaypointSolution {
            waypoints: WaypointSet::new(),
            assignment: a,
            objective: 0.0,
            branches: 1,
            solved: 0,
            pruned: 0,
        });
    }
    let same_r = cache.r.as_ref() == Some(&stage.r);
    if !same_r {
        for memo in cache.memo.values_mut() {
            memo.start = NlpStart::default();
        }
        cache.r = Some(stage.r.clone());
    }

    let (l, ind) = laplacian(stage);
    let idx: HashMap<usize, usize> = stage.sub.nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut schurs: HashMap<Vec<usize>, Arc<Schur>> = HashMap::new();
    let mut branches = Vec::with_capacity(candidates.len());
    for a in &candidates {
        let mut rel_nodes = vec![Vec::new(); m];
        for &v in &stage.sub.nodes {
            for j in stage.variable_agents(v, a)? {
                rel_nodes[j].push(idx[&v]);
            }
        }
        for rel in &rel_nodes {
            if !rel.is_empty() && !schurs.contains_key(rel) {
                schurs.insert(rel.clone(), Arc::new(schur(&l, &ind, rel.clone())));
            }
        }
        let seed = cache.memo.get(a).map(|memo| &memo.waypoints).or(warm);
        let compiled = compile(stage, a, &schurs, &rel_nodes, seed);
        branches.push(Branch { a: a.clone(), rel_nodes, compiled });
    }

    let opts = nlp_options();
    let threads = params.thread_count();

    // Lower bounds from the per-agent convex relaxations, shared between
    // branches that give an agent the same subtasks.
    let bounds: Vec<f64> = if params.branch_bound && branches.len() > 1 {
        let mut memo: HashMap<(usize, Vec<usize>), f64> = HashMap::new();
        let mut jobs: Vec<(usize, usize)> = Vec::new();
        let mut keys = Vec::new();
        for (b, br) in branches.iter().enumerate() {
            for j in 0..m {
                let key = (j, br.a.subtasks_of(j).collect::<Vec<_>>());
                if !memo.contains_key(&key) {
                    memo.insert(key.clone(), f64::NAN);
                    jobs.push((b, j));
                    keys.push(key);
                }
            }
        }
        let values = par_map(&jobs, threads, |&(b, j)| {
            let c = &branches[b].compiled;
            if c.agent_cols[j].is_empty() {
                return 0.0;
            }
            let relax = c.relaxation(j);
            let rep = solve_nlp(&relax, &NlpStart::cold(c.relaxation_start(j)), &opts);
            match rep.status {
                SolveStatus::Optimal => rep.objective,
                SolveStatus::Infeasible => f64::INFINITY,
                SolveStatus::MaxIterations => 0.0,
            }
        });
        for (key, v) in keys.into_iter().zip(values) {
            memo.insert(key, v);
        }
        branches.iter().map(|br| (0..m).map(|j| memo[&(j, br.a.subtasks_of(j).collect::<Vec<_>>())]).sum()).collect()
    } else {
        vec![f64::NEG_INFINITY; branches.len()]
    };

    // Solve in order of increasing bound; a branch whose bound is above the
    // incumbent cannot win.
    let mut order: Vec<usize> = (0..branches.len()).collect();
    order.sort_by(|&x, &y| bounds[x].total_cmp(&bounds[y]).then(x.cmp(&y)));
    let mut results: Vec<Option<goc_solvers::SolveReport>> = vec![None; branches.len()];
    let mut incumbent = f64::INFINITY;
    let mut solved = 0;
    let mut pruned = 0;
    let mut pos = 0;
    while pos < order.len() {
        let mut batch = Vec::new();
        while pos < order.len() && batch.len() < threads {
            let b = order[pos];
            pos += 1;
            if bounds[b] > incumbent + 1e-9 * (1.0 + incumbent.abs()) {
                pruned += 1;
                continue;
            }
            batch.push(b);
        }
        let reports = par_map(&batch, threads, |&b| {
            let br = &branches[b];
            let start = match cache.memo.get(&br.a) {
                Some(memo) if same_r && memo.start.x.len() == br.compiled.init.len() => memo.start.clone(),
                _ => NlpStart::cold(br.compiled.init.clone()),
            };
            solve_nlp(&br.compiled.nlp, &start, &opts)
        });
        for (b, rep) in batch.into_iter().zip(reports) {
            solved += 1;
            if rep.is_optimal() {
                incumbent = incumbent.min(rep.objective);
            }
            results[b] = Some(rep);
        }
    }

    let mut best: Option<usize> = None;
    for (b, rep) in results.iter().enumerate() {
        let Some(rep) = rep else { continue };
        let br = &branches[b];
        let w = br.compiled.waypoints(stage, &rep.x, &br.rel_nodes, &schurs);
        cache.memo.insert(br.a.clone(), Memo { start: NlpStart::from_report(rep), waypoints: w });
        if !rep.is_optimal() {
            continue;
        }
        let better = match best {
            None => true,
            Some(o) => {
                let ro = results[o].as_ref().unwrap();
                rep.objective < ro.objective || (rep.objective == ro.objective && br.a < branches[o].a)
            }
        };
        if better {
            best = Some(b);
        }
    }
    let Some(b) = best else {
        return Err(PlanError::AllBranchesInfeasible { branches: branches.len() });
    };
    let rep = results[b].as_ref().unwrap();
    Ok(WaypointSolution {
        waypoints: cache.memo[&branches[b].a].waypoints.clone(),
        assignment: branches[b].a.clone(),
        objective: rep.objective,
        branches: branches.len(),
        solved,
        pruned,
    })
}

/// Objective of the waypoint problem evaluated on a full waypoint set.
pub fn waypoint_objective(stage: &Stage, w: &WaypointSet) -> f64 {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut f = 0.0;
    for v in &stage.sub.frontier {
        f += sq(stage.x0.actuated(), w[v].actuated());
    }
    for &i in &stage.sub.edges {
        let e = &stage.goc.edges[i];
        f += sq(w[&e.from].actuated(), w[&e.to].actuated());
    }
    f
}
