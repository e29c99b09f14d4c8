//! Randomized tabletop scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{Constraint, PointRef, Primitive};
use crate::graph::{Edge, Node};
use crate::planner::PlannerParams;
use crate::scenario::{aabb, AgentDoc, GocDoc, Scenario, SystemDoc, SCHEMA_VERSION};

pub const BLOCK_HALF: f64 = 0.025;
/// Grasp tolerance at a pick node.
pub const GRASP_TOL: f64 = 0.01;
/// Looser tolerance held while carrying, so a grasp that completed within
/// the progression tolerance stays feasible along the carry edge.
pub const HOLD_TOL: f64 = 0.025;
const MIN_SEPARATION: f64 = 0.1;
const TARGET_CLEARANCE: f64 = 0.15;
const MAX_TRIES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerateError {
    #[error("could not place {blocks} blocks without overlap")]
    PlacementOverlap { blocks: usize },
    #[error("need at least one block and one agent")]
    Empty,
}

fn node(name: String, constraints: Vec<Constraint>) -> Node {
    Node { name: Some(name), constraints }
}

fn grasp(p: usize, tol: f64) -> Constraint {
    Constraint::gated(Primitive::GraspAt { keypoint: p, tol }, p)
}

fn in_box(p: usize, center: [f64; 3], half: [f64; 3]) -> Constraint {
    Constraint::gated(
        Primitive::WithinBox {
            point: PointRef::Keypoint(p),
            lo: (0..3).map(|d| center[d] - half[d]).collect(),
            hi: (0..3).map(|d| center[d] + half[d]).collect(),
        },
        p,
    )
}

/// Gated by the subtask of the upper block.
fn offset(below: usize, above: usize, axis: usize, lo: f64, hi: f64) -> Constraint {
    Constraint::gated(
        Primitive::AxisOffsetBetween { a: PointRef::Keypoint(below), b: PointRef::Keypoint(above), axis, lo, hi },
        above,
    )
}

fn agents_along_front(m: usize) -> Vec<AgentDoc> {
    (0..m)
        .map(|j| {
            let x = if m == 1 { 0.0 } else { -0.45 + 0.9 * j as f64 / (m - 1) as f64 };
            AgentDoc { position: vec![x, -0.55, 0.3], velocity: None }
        })
        .collect()
}

fn sample_blocks(
    rng: &mut ChaCha8Rng,
    n: usize,
    x: (f64, f64),
    y: (f64, f64),
    keep_clear: &[[f64; 2]],
) -> Result<Vec<Vec<f64>>, GenerateError> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > MAX_TRIES {
            return Err(GenerateError::PlacementOverlap { blocks: n });
        }
        let p = [rng.gen_range(x.0..x.1), rng.gen_range(y.0..y.1)];
        let far = |q: &[f64], r: f64| (p[0] - q[0]).hypot(p[1] - q[1]) >= r;
        if out.iter().all(|q| far(q, MIN_SEPARATION)) && keep_clear.iter().all(|q| far(q, TARGET_CLEARANCE)) {
            out.push(vec![p[0], p[1], BLOCK_HALF]);
        }
    }
    Ok(out)
}

/// `n` blocks scattered on the table and `m` agents along its front edge.
/// Block `i` is picked by subtask `i` (node `2i`) and placed by node `2i+1`.
/// The first block goes on the central target and each later one on top of
/// its predecessor, so picks are unordered and placements form a chain.
pub fn generate_stacking_scenario(n: usize, m: usize, seed: u64) -> Result<Scenario, GenerateError> {
    if n == 0 || m == 0 {
        return Err(GenerateError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = [0.0, 0.0];
    let blocks = sample_blocks(&mut rng, n, (-0.45, 0.45), (-0.4, 0.45), &[target])?;
    let mut nodes = Vec::with_capacity(2 * n);
    let mut edges = Vec::new();
    for i in 0..n {
        nodes.push(node(format!("pick_{i}"), vec![grasp(i, GRASP_TOL)]));
        let place = if i == 0 {
            vec![in_box(0, [target[0], target[1], BLOCK_HALF], [0.01, 0.01, 0.01])]
        } else {
            vec![
                offset(i - 1, i, 2, 2.0 * BLOCK_HALF - 0.005, 2.0 * BLOCK_HALF + 0.005),
                offset(i - 1, i, 0, -0.005, 0.005),
                offset(i - 1, i, 1, -0.005, 0.005),
            ]
        };
        nodes.push(node(format!("place_{i}"), place));
        edges.push(Edge { from: 2 * i, to: 2 * i + 1, constraints: vec![grasp(i, HOLD_TOL)] });
        if i > 0 {
            edges.push(Edge { from: 2 * i - 1, to: 2 * i + 1, constraints: Vec::new() });
        }
    }
    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        id: format!("stacking_{n}x{m}_s{seed}"),
        seed,
        system: SystemDoc {
            dim: 3,
            agents: agents_along_front(m),
            keypoints: blocks,
            workspace: aabb(&[-0.6, -0.6, 0.0], &[0.6, 0.6, 0.6]),
        },
        goc: GocDoc { subtasks: n, nodes, edges },
        rigid_coupling: Vec::new(),
        disturbances: Vec::new(),
        obstacles: Vec::new(),
        planner: PlannerParams::default(),
        budget_s: 20.0 + 10.0 * n as f64,
    })
}

/// Two agents each able to move one of two blocks into one of two target
/// zones. The two pick-and-place chains are independent.
pub fn parallel_pickup(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zones = [[-0.3, 0.35], [0.3, 0.35]];
    let mut keypoints = Vec::new();
    for side in [-1.0, 1.0] {
        let x = side * rng.gen_range(0.15..0.45);
        let y = rng.gen_range(-0.3..0.05);
        keypoints.push(vec![x, y, BLOCK_HALF]);
    }
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (i, z) in zones.iter().enumerate() {
        nodes.push(node(format!("pick_{i}"), vec![grasp(i, GRASP_TOL)]));
        nodes.push(node(format!("place_{i}"), vec![in_box(i, [z[0], z[1], BLOCK_HALF], [0.03, 0.03, 0.01])]));
        edges.push(Edge { from: 2 * i, to: 2 * i + 1, constraints: vec![grasp(i, HOLD_TOL)] });
    }
    Scenario {
        schema_version: SCHEMA_VERSION,
        id: format!("parallel_pickup_s{seed}"),
        seed,
        system: SystemDoc {
            dim: 3,
            agents: vec![
                AgentDoc { position: vec![-0.3, -0.55, 0.3], velocity: None },
                AgentDoc { position: vec![0.3, -0.55, 0.3], velocity: None },
            ],
            keypoints,
            workspace: aabb(&[-0.6, -0.6, 0.0], &[0.6, 0.6, 0.6]),
        },
        goc: GocDoc { subtasks: 2, nodes, edges },
        rigid_coupling: Vec::new(),
        disturbances: Vec::new(),
        obstacles: Vec::new(),
        planner: PlannerParams::default(),
        budget_s: 30.0,
    }
}

/// A scenario family that is regenerated for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Stacking {
        blocks: usize,
        agents: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget_s: Option<f64>,
    },
    ParallelPickup,
}

impl GeneratorSpec {
    pub fn build(&self, seed: u64) -> Result<Scenario, GenerateError> {
        match self {
            GeneratorSpec::Stacking { blocks, agents, budget_s } => {
                let mut s = generate_stacking_scenario(*blocks, *agents, seed)?;
                if let Some(b) = budget_s {
                    s.budget_s = *b;
                }
                Ok(s)
            }
            GeneratorSpec::ParallelPickup => Ok(parallel_pickup(seed)),
        }
    }

    pub fn id(&self) -> String {
        match self {
            GeneratorSpec::Stacking { blocks, agents, .. } => format!("stacking_{blocks}x{agents}"),
            GeneratorSpec::ParallelPickup => "parallel_pickup".into(),
        }
    }
}
