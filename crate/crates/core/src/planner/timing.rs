//! Spline timing problem: one duration per segment and one velocity per
//! interior waypoint, linked by linear speed and acceleration couplings and
//! the cross-agent ordering and synchronization constraints.

use goc_solvers::{solve_qp, QpOptions, QpProblem};
use nalgebra::{DMatrix, DVector};

use crate::graph::AgentPathPlan;
use crate::system::{Configuration, Velocity};

use super::spline::AgentSpline;
use super::waypoints::WaypointSet;
use super::{PlanError, PlannerParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSolution {
    pub splines: Vec<AgentSpline>,
    pub makespan: f64,
    pub iterations: usize,
}

impl TimingSolution {
    /// Duration of the first segment of agent `j`, if it has one.
    pub fn first_delta(&self, j: usize) -> Option<f64> {
        self.splines[j].deltas.first().copied()
    }
}

#[derive(Default)]
struct Rows {
    coeffs: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Rows {
    fn push(&mut self, c: Vec<(usize, f64)>, lo: f64, hi: f64) {
        self.coeffs.push(c);
        self.lo.push(lo);
        self.hi.push(hi);
    }
}

/// Layout of one agent's variables.
struct AgentVars {
    n: usize,
    delta: usize,
    /// Interior velocities, `(n - 1) * dim` columns.
    vel: usize,
    s_v: usize,
    s_a: usize,
}

/// A velocity entry: either a column or a fixed value.
#[derive(Clone, Copy)]
enum Vel {
    Col(usize),
    Fixed(f64),
}

pub fn solve_timing(
    plan: &AgentPathPlan,
    w: &WaypointSet,
    x0: &Configuration,
    v0: &Velocity,
    params: &PlannerParams,
) -> Result<TimingSolution, PlanError> {
    let m = plan.chains.len();
    let dim = x0.dim();
    let mut vars: Vec<Option<AgentVars>> = Vec::with_capacity(m);
    let mut n = 0;
    for chain in &plan.chains {
        let k = chain.len();
        if k == 0 {
            vars.push(None);
            continue;
        }
        let av = AgentVars { n: k, delta: n, vel: n + k, s_v: n + k + (k - 1) * dim, s_a: n + k + (k - 1) * dim + 1 };
        n = av.s_a + 1;
        vars.push(Some(av));
    }
    if n == 0 {
        let splines = (0..m).map(|j| AgentSpline::stationary(x0.agent(j))).collect();
        return Ok(TimingSolution { splines, makespan: 0.0, iterations: 0 });
    }

    let points = |j: usize| -> Vec<Vec<f64>> {
        let mut p = vec![x0.agent(j).to_vec()];
        p.extend(plan.chains[j].iter().map(|v| w[v].agent(j).to_vec()));
        p
    };

    let mut p_mat = DMatrix::zeros(n, n);
    let mut q = DVector::zeros(n);
    let mut rows = Rows::default();
    for (j, av) in vars.iter().enumerate() {
        let Some(av) = av else { continue };
        let pts = points(j);
        let vel = |i: usize, d: usize| -> Vel {
            if i == 0 {
                Vel::Fixed(v0.agent(j)[d])
            } else if i == av.n {
                Vel::Fixed(0.0)
            } else {
                Vel::Col(av.vel + (i - 1) * dim + d)
            }
        };
        // Linear form `sum c_k V_k` split into columns and a constant.
        let lin = |terms: &[(Vel, f64)]| -> (Vec<(usize, f64)>, f64) {
            let mut cols = Vec::new();
            let mut c = 0.0;
            for &(v, s) in terms {
                match v {
                    Vel::Col(k) => cols.push((k, s)),
                    Vel::Fixed(x) => c += s * x,
                }
            }
            (cols, c)
        };
        for i in 0..av.n {
            let col = av.delta + i;
            q[col] += params.w_time;
            let span = (0..dim).map(|d| (pts[i + 1][d] - pts[i][d]).abs()).fold(0.0, f64::max);
            rows.push(vec![(col, 1.0)], params.delta_min.max(span / params.v_max), f64::INFINITY);
            for d in 0..dim {
                let (cols, c) = lin(&[(vel(i + 1, d), 1.0), (vel(i, d), -1.0)]);
                // Smoothness: w (V(i+1) - V(i))², constants folded into q.
                for &(a, sa) in &cols {
                    q[a] += 2.0 * params.w_smooth * sa * c;
                    for &(b, sb) in &cols {
                        p_mat[(a, b)] += 2.0 * params.w_smooth * sa * sb;
                    }
                }
                // |ΔV| <= a_max Δ and |ΔV| <= s_a.
                let mut up = cols.clone();
                up.push((col, -params.a_max));
                rows.push(up, f64::NEG_INFINITY, -c);
                let mut dn: Vec<(usize, f64)> = cols.iter().map(|&(k, s)| (k, -s)).collect();
                dn.push((col, -params.a_max));
                rows.push(dn, f64::NEG_INFINITY, c);
                let mut up = cols.clone();
                up.push((av.s_a, -1.0));
                rows.push(up, f64::NEG_INFINITY, -c);
                let mut dn: Vec<(usize, f64)> = cols.iter().map(|&(k, s)| (k, -s)).collect();
                dn.push((av.s_a, -1.0));
                rows.push(dn, f64::NEG_INFINITY, c);
                if let (Some(jm), true) = (params.jerk_max, i >= 1) {
                    let (cols, c) = lin(&[(vel(i + 1, d), 1.0), (vel(i, d), -2.0), (vel(i - 1, d), 1.0)]);
                    let mut up = cols.clone();
                    up.push((col, -jm));
                    rows.push(up, f64::NEG_INFINITY, -c);
                    let mut dn: Vec<(usize, f64)> = cols.iter().map(|&(k, s)| (k, -s)).collect();
                    dn.push((col, -jm));
                    rows.push(dn, f64::NEG_INFINITY, c);
                }
            }
        }
        for i in 1..av.n {
            for d in 0..dim {
                let k = av.vel + (i - 1) * dim + d;
                rows.push(vec![(k, 1.0), (av.s_v, -1.0)], f64::NEG_INFINITY, 0.0);
                rows.push(vec![(k, -1.0), (av.s_v, -1.0)], f64::NEG_INFINITY, 0.0);
            }
        }
        rows.push(vec![(av.s_v, 1.0)], 0.0, f64::INFINITY);
        rows.push(vec![(av.s_a, 1.0)], 0.0, f64::INFINITY);
        q[av.s_v] += params.w_vel;
        q[av.s_a] += params.w_acc;
    }

    let arrival = |j: usize, l: usize, s: f64, out: &mut Vec<(usize, f64)>| {
        let av = vars[j].as_ref().expect("timing link refers to an agent with a chain");
        out.extend((0..=l).map(|i| (av.delta + i, s)));
    };
    for &(ja, la, jb, lb) in &plan.order {
        let mut c = Vec::new();
        arrival(ja, la, 1.0, &mut c);
        arrival(jb, lb, -1.0, &mut c);
        rows.push(c, f64::NEG_INFINITY, 0.0);
    }
    for &(ja, la, jb, lb) in &plan.sync {
        let mut c = Vec::new();
        arrival(ja, la, 1.0, &mut c);
        arrival(jb, lb, -1.0, &mut c);
        rows.push(c, 0.0, 0.0);
    }

    let mrows = rows.coeffs.len();
    let mut a = DMatrix::zeros(mrows, n);
    for (i, c) in rows.coeffs.iter().enumerate() {
        for &(k, v) in c {
            a[(i, k)] += v;
        }
    }
    let prob = QpProblem::new(p_mat, q, a, DVector::from_vec(rows.lo), DVector::from_vec(rows.hi))
        .map_err(|e| PlanError::Timing(e.to_string()))?;
    let rep = solve_qp(&prob, None, &QpOptions::default());
    if !rep.is_optimal() {
        return Err(PlanError::Timing(format!(
            "{:?} after {} iterations (primal {:.1e}, dual {:.1e})",
            rep.status, rep.iterations, rep.primal_residual, rep.dual_residual
        )));
    }
    let x = &rep.x;
    let mut splines = Vec::with_capacity(m);
    let mut makespan: f64 = 0.0;
    for (j, av) in vars.iter().enumerate() {
        let Some(av) = av else {
            splines.push(AgentSpline::stationary(x0.agent(j)));
            continue;
        };
        let deltas: Vec<f64> = (0..av.n).map(|i| x[av.delta + i]).collect();
        let mut velocities = vec![v0.agent(j).to_vec()];
        for i in 1..av.n {
            velocities.push((0..dim).map(|d| x[av.vel + (i - 1) * dim + d]).collect());
        }
        velocities.push(vec![0.0; dim]);
        makespan = makespan.max(deltas.iter().sum());
        splines.push(AgentSpline { waypoints: points(j), velocities, deltas });
    }
    Ok(TimingSolution { splines, makespan, iterations: rep.iterations })
}
