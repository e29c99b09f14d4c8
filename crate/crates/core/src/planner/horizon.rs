//! Short receding-horizon tracking problem.

use goc_solvers::{solve_qp, QpOptions, QpProblem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::system::{Aabb, Configuration};

use super::spline::{eval_spline, AgentSpline};
use super::{PlanError, PlannerParams};

/// A point agents keep at least `clearance` away from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub point: Vec<f64>,
    pub clearance: f64,
}

/// Joint actuated configurations `dt` apart. `steps[0]` is the state the
/// plan starts from and `steps[1]` is the next command.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonPlan {
    pub steps: Vec<Vec<f64>>,
    pub dt: f64,
    /// Obstacle half-spaces were dropped to recover feasibility.
    pub fallback: bool,
    pub cost: f64,
}

impl HorizonPlan {
    /// A plan that holds the current actuated state.
    pub fn hold(x: &Configuration, params: &PlannerParams) -> Self {
        Self { steps: vec![x.actuated().to_vec(); params.horizon + 1], dt: params.dt, fallback: false, cost: 0.0 }
    }

    pub fn command(&self) -> &[f64] {
        &self.steps[1.min(self.steps.len() - 1)]
    }
}

/// Joint reference at time `t`.
pub fn reference(splines: &[AgentSpline], t: f64) -> Vec<f64> {
    splines.iter().flat_map(|s| eval_spline(s, t).0).collect()
}

pub fn solve_horizon(
    splines: &[AgentSpline],
    x: &Configuration,
    obstacles: &[Obstacle],
    workspace: &Aabb,
    params: &PlannerParams,
) -> Result<HorizonPlan, PlanError> {
    let h = params.horizon;
    let dim = x.dim();
    let na = x.actuated().len();
    let agents = na / dim;
    let n = h * na;
    let refs: Vec<Vec<f64>> = (1..=h)
        .map(|t| {
            let t = t as f64 * params.dt;
            if params.hold_next_waypoint {
                splines.iter().flat_map(|s| eval_spline(s, t.min(s.arrival(1.min(s.num_segments())))).0).collect()
            } else {
                reference(splines, t)
            }
        })
        .collect();
    let x0 = x.actuated();
    let mut bounds = workspace.clone();
    for j in 0..agents {
        bounds = bounds.expanded_to(&x0[j * dim..(j + 1) * dim]);
    }

    let p = DMatrix::from_diagonal_element(n, n, 2.0 * params.w_track);
    let q = DVector::from_iterator(n, refs.iter().flatten().map(|r| -2.0 * params.w_track * r));
    let mut coeffs: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let step = params.v_max * params.dt;
    for t in 0..h {
        for i in 0..na {
            let col = t * na + i;
            if t == 0 {
                coeffs.push(vec![(col, 1.0)]);
                lo.push(x0[i] - step);
                hi.push(x0[i] + step);
            } else {
                coeffs.push(vec![(col, 1.0), (col - na, -1.0)]);
                lo.push(-step);
                hi.push(step);
            }
            coeffs.push(vec![(col, 1.0)]);
            lo.push(bounds.lo[i % dim]);
            hi.push(bounds.hi[i % dim]);
        }
    }
    let base_rows = coeffs.len();
    for (t, r) in refs.iter().enumerate() {
        for j in 0..agents {
            let rj = &r[j * dim..(j + 1) * dim];
            for o in obstacles {
                let diff: Vec<f64> = rj.iter().zip(&o.point).map(|(a, b)| a - b).collect();
                let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                if dist >= params.activation_radius.max(o.clearance) {
                    continue;
                }
                let normal: Vec<f64> = if dist > 1e-12 {
                    diff.iter().map(|v| v / dist).collect()
                } else {
                    (0..dim).map(|d| if d == 0 { 1.0 } else { 0.0 }).collect()
                };
                let offset: f64 = normal.iter().zip(&o.point).map(|(a, b)| a * b).sum();
                coeffs.push((0..dim).map(|d| (t * na + j * dim + d, normal[d])).collect());
                lo.push(o.clearance + offset);
                hi.push(f64::INFINITY);
            }
        }
    }

    let build = |rows: usize| -> Result<QpProblem, PlanError> {
        let mut a = DMatrix::zeros(rows, n);
        for (i, c) in coeffs[..rows].iter().enumerate() {
            for &(k, v) in c {
                a[(i, k)] += v;
            }
        }
        QpProblem::new(
            p.clone(),
            q.clone(),
            a,
            DVector::from_column_slice(&lo[..rows]),
            DVector::from_column_slice(&hi[..rows]),
        )
        .map_err(|e| PlanError::Horizon(e.to_string()))
    };
    let opts = QpOptions::default();
    let mut fallback = false;
    let mut rep = solve_qp(&build(coeffs.len())?, None, &opts);
    if !rep.is_optimal() && coeffs.len() > base_rows {
        fallback = true;
        rep = solve_qp(&build(base_rows)?, None, &opts);
    }
    if !rep.is_optimal() {
        return Err(PlanError::Horizon(format!("{:?} after {} iterations", rep.status, rep.iterations)));
    }
    let const_cost: f64 = refs.iter().flatten().map(|r| params.w_track * r * r).sum();
    let mut steps = vec![x0.to_vec()];
    steps.extend(rep.x.chunks(na).map(|c| c.to_vec()));
    Ok(HorizonPlan { steps, dt: params.dt, fallback, cost: rep.objective + const_cost })
}
