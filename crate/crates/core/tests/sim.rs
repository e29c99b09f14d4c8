use std::collections::BTreeSet;

use goc_core::constraints::{Constraint, Primitive};
use goc_core::graph::{Edge, Goc, Node, RemainingSet};
use goc_core::planner::{HorizonPlan, PlannerParams};
use goc_core::scenario::{Disturbance, DisturbanceKind, GocDoc, Scenario};
use goc_core::sim::{
    generate_stacking_scenario, parallel_pickup, run_episode, step_world, update_attachments, EpisodeReport, Method,
    WorldState,
};
use goc_core::{Aabb, AssignmentMatrix, Configuration, SystemSpec};
use proptest::prelude::*;

fn spec() -> SystemSpec {
    SystemSpec::uniform(3, 1, 2, Aabb::new(vec![-1.0; 3], vec![1.0; 3])).unwrap()
}

fn world(agent: [f64; 3], keypoints: [[f64; 3]; 2], disturbances: usize) -> WorldState {
    let s = spec();
    let x = Configuration::from_parts(&s, &[agent.to_vec()], &[keypoints[0].to_vec(), keypoints[1].to_vec()]).unwrap();
    WorldState::new(x, Configuration::zeros(&s), disturbances)
}

fn plan_to(w: &WorldState, target: [f64; 3], dt: f64) -> HorizonPlan {
    HorizonPlan { steps: vec![w.x.agent(0).to_vec(), target.to_vec()], dt, fallback: false, cost: 0.0 }
}

fn fast() -> PlannerParams {
    PlannerParams { v_max: 1.0, ..PlannerParams::default() }
}

#[test]
fn idle_step_only_advances_the_clock() {
    let w = world([0.1, 0.2, 0.3], [[0.5; 3], [-0.5; 3]], 0);
    let plan = plan_to(&w, [0.1, 0.2, 0.3], 0.1);
    let next = step_world(w.clone(), &plan, 0.1, &[], &fast());
    assert_eq!(next.x, w.x);
    assert_eq!(next.arc_length, vec![0.0]);
    assert!((next.clock - 0.1).abs() < 1e-15);
}

#[test]
fn attached_keypoint_rides_along() {
    let mut w = world([0.0; 3], [[0.0, 0.0, -0.02], [0.5; 3]], 0);
    w.attached[0] = Some(0);
    let plan = plan_to(&w, [0.1, 0.0, 0.0], 0.1);
    let next = step_world(w, &plan, 0.1, &[], &fast());
    assert_eq!(next.x.agent(0), &[0.1, 0.0, 0.0]);
    assert!((next.x.keypoint(0)[0] - 0.1).abs() < 1e-15);
    assert_eq!(next.x.keypoint(0)[2], -0.02);
    assert_eq!(next.x.keypoint(1), &[0.5; 3]);
}

#[test]
fn speed_is_clipped_per_axis() {
    let w = world([0.0; 3], [[0.5; 3], [0.5; 3]], 0);
    let plan = plan_to(&w, [0.3, -0.01, 0.0], 0.1);
    let next = step_world(w, &plan, 0.1, &[], &PlannerParams::default());
    assert_eq!(next.x.agent(0), &[0.05, -0.01, 0.0]);
}

#[test]
fn teleport_breaks_the_grasp() {
    let mut w = world([0.0; 3], [[0.0, 0.0, 0.0], [0.5; 3]], 1);
    w.attached[0] = Some(0);
    let push = Disturbance {
        at: 0.0,
        after_grasp: false,
        event: DisturbanceKind::TeleportKeypoint { keypoint: 0, displacement: vec![0.0, 0.3, 0.0] },
    };
    let plan = plan_to(&w, [0.1, 0.0, 0.0], 0.1);
    let next = step_world(w, &plan, 0.1, std::slice::from_ref(&push), &fast());
    // Motion first, then the displacement.
    assert_eq!(next.x.keypoint(0), &[0.1, 0.3, 0.0]);
    assert_eq!(next.attached[0], None);
    assert_eq!(next.applied.len(), 1);
    assert_eq!(next.applied[0].holder, Some(0));
    assert!(next.applied[0].released);
}

#[test]
fn small_teleport_keeps_the_grasp() {
    let mut w = world([0.0; 3], [[0.0; 3], [0.5; 3]], 1);
    w.attached[0] = Some(0);
    let nudge = Disturbance {
        at: 0.0,
        after_grasp: false,
        event: DisturbanceKind::TeleportKeypoint { keypoint: 0, displacement: vec![0.0, 0.005, 0.0] },
    };
    let next = step_world(w.clone(), &plan_to(&w, [0.0; 3], 0.1), 0.1, &[nudge], &fast());
    assert_eq!(next.attached[0], Some(0));
}

#[test]
fn frozen_agent_does_not_move() {
    let w = world([0.0; 3], [[0.5; 3], [0.5; 3]], 1);
    let freeze =
        Disturbance { at: 0.0, after_grasp: false, event: DisturbanceKind::FreezeAgent { agent: 0, duration: 0.15 } };
    let plan = plan_to(&w, [0.01, 0.0, 0.0], 0.1);
    let w = step_world(w, &plan, 0.1, std::slice::from_ref(&freeze), &fast());
    assert!((w.x.agent(0)[0] - 0.01).abs() < 1e-15, "the freeze lands after this step's motion");
    let plan = plan_to(&w, [0.02, 0.0, 0.0], 0.1);
    let w = step_world(w, &plan, 0.1, std::slice::from_ref(&freeze), &fast());
    assert!((w.x.agent(0)[0] - 0.01).abs() < 1e-15);
    let plan = plan_to(&w, [0.02, 0.0, 0.0], 0.1);
    let w = step_world(w, &plan, 0.1, std::slice::from_ref(&freeze), &fast());
    assert!((w.x.agent(0)[0] - 0.02).abs() < 1e-15);
}

/// Node 0 grasps keypoint 0 (subtask 0), node 1 places it.
fn grasp_graph() -> Goc {
    let grasp = |tol| Constraint::gated(Primitive::GraspAt { keypoint: 0, tol }, 0);
    Goc::new(
        vec![Node { name: None, constraints: vec![grasp(0.0)] }, Node { name: None, constraints: vec![] }],
        vec![Edge { from: 0, to: 1, constraints: vec![grasp(0.02)] }],
        1,
    )
}

fn rs(v: &[usize]) -> RemainingSet {
    v.iter().copied().collect()
}

#[test]
fn attachment_follows_progress() {
    let goc = grasp_graph();
    let a = AssignmentMatrix::new(vec![0], 1).unwrap();
    let near = world([0.005, 0.0, 0.0], [[0.0; 3], [0.5; 3]], 0);
    let w = update_attachments(near, &rs(&[0, 1]), &rs(&[1]), &goc, &a, 0.01);
    assert_eq!(w.attached[0], Some(0));

    // Backtracking the grasp node releases the keypoint.
    let w = update_attachments(w, &rs(&[1]), &rs(&[0, 1]), &goc, &a, 0.01);
    assert_eq!(w.attached[0], None);

    let far = world([0.05, 0.0, 0.0], [[0.0; 3], [0.5; 3]], 0);
    let w = update_attachments(far, &rs(&[0, 1]), &rs(&[1]), &goc, &a, 0.01);
    assert_eq!(w.attached[0], None);
}

#[test]
fn carry_ends_at_the_place_node() {
    let goc = grasp_graph();
    let a = AssignmentMatrix::new(vec![0], 1).unwrap();
    let mut w = world([0.0; 3], [[0.0; 3], [0.5; 3]], 0);
    w.attached[0] = Some(0);
    let w = update_attachments(w, &rs(&[1]), &rs(&[]), &goc, &a, 0.01);
    assert_eq!(w.attached[0], None);
}

fn teleport_scenario(seed: u64) -> Scenario {
    let mut s = parallel_pickup(seed);
    s.disturbances.push(Disturbance {
        at: 0.3,
        after_grasp: true,
        event: DisturbanceKind::TeleportKeypoint { keypoint: 1, displacement: vec![0.0, -0.15, 0.0] },
    });
    s
}

fn run(s: &Scenario, method: Method) -> EpisodeReport {
    run_episode(s, &s.planner, method, s.budget_s).unwrap()
}

#[test]
fn parallel_pickup_succeeds() {
    let r = run(&parallel_pickup(0), Method::Goc);
    assert!(r.success, "{:?}", r.error);
    assert_eq!(r.backtracks, 0);
    assert!(r.max_cycle_s >= r.avg_cycle_s && r.avg_cycle_s > 0.0);
    assert!(r.total_length > 0.0);
}

#[test]
fn knocked_block_is_picked_again() {
    let s = teleport_scenario(0);
    let r = run(&s, Method::Goc);
    assert!(r.success, "{:?}", r.error);
    assert!(r.backtracks >= 1);
    let holder = r.disturbances[0].holder.expect("the block was held");
    let agents: BTreeSet<usize> = r.backtrack_events.iter().flat_map(|e| e.agents.iter().copied()).collect();
    assert_eq!(agents, [holder].into());
}

#[test]
fn empty_graph_succeeds_at_once() {
    let mut s = parallel_pickup(0);
    s.goc = GocDoc { subtasks: 0, nodes: vec![], edges: vec![] };
    let r = run(&s, Method::Goc);
    assert!(r.success);
    assert_eq!(r.cycles, 0);
    assert_eq!(r.total_length, 0.0);
}

#[test]
fn stacking_structure() {
    let s = generate_stacking_scenario(3, 2, 0).unwrap();
    let l = s.load().unwrap();
    assert_eq!(l.goc.subtasks, 3);
    assert_eq!(l.goc.len(), 6);
    let reach = l.goc.reachability();
    let picks: Vec<usize> = (0..3).map(|i| 2 * i).collect();
    for &a in &picks {
        for &b in &picks {
            assert!(a == b || !reach[a][b], "pick {a} precedes pick {b}");
        }
    }
    let places: Vec<usize> = (0..3).map(|i| 2 * i + 1).collect();
    for w in places.windows(2) {
        assert!(l.goc.edges.iter().any(|e| (e.from, e.to) == (w[0], w[1])));
    }
    assert_eq!(s.system.agents.len(), 2);

    let one = generate_stacking_scenario(1, 1, 0).unwrap().load().unwrap();
    assert_eq!(one.goc.len(), 2);
    assert_eq!(one.goc.edges.iter().map(|e| (e.from, e.to)).collect::<Vec<_>>(), vec![(0, 1)]);

    let five = generate_stacking_scenario(5, 2, 0).unwrap();
    assert_eq!((five.goc.subtasks, five.goc.nodes.len(), five.system.agents.len()), (5, 10, 2));
    assert!(generate_stacking_scenario(0, 2, 0).is_err());
}

#[test]
fn generator_is_deterministic() {
    assert_eq!(generate_stacking_scenario(4, 3, 11).unwrap(), generate_stacking_scenario(4, 3, 11).unwrap());
    assert_ne!(generate_stacking_scenario(4, 3, 11).unwrap(), generate_stacking_scenario(4, 3, 12).unwrap());
}

/// Report fields that do not depend on wall-clock time.
fn stable(r: &EpisodeReport) -> impl PartialEq + std::fmt::Debug + '_ {
    (
        r.success,
        r.cycles,
        r.total_length,
        &r.agent_lengths,
        r.backtracks,
        r.sim_time,
        r.first_makespan,
        &r.backtrack_events,
        &r.progress_events,
        &r.trajectory,
        &r.disturbances,
        &r.error,
    )
}

#[test]
fn episodes_are_deterministic() {
    let s = teleport_scenario(2);
    let (a, b) = (run(&s, Method::Goc), run(&s, Method::Goc));
    assert_eq!(stable(&a), stable(&b));
}

#[test]
fn disturbance_stays_local() {
    for seed in [1, 3] {
        let r = run(&teleport_scenario(seed), Method::Goc);
        assert!(r.success, "seed {seed}");
        // Keypoint 1 belongs to nodes 2 and 3; nodes 0 and 1 never return.
        for e in &r.backtrack_events {
            assert!(e.node == 2 || e.node == 3, "seed {seed}: {e:?}");
        }
        let mut done = BTreeSet::new();
        for &(_, node) in &r.progress_events {
            if node < 2 {
                assert!(done.insert(node), "seed {seed}: node {node} completed twice");
            }
        }
    }
}

fn episode_invariants(r: &EpisodeReport, s: &Scenario) {
    let dim = s.system.dim;
    let m = s.system.agents.len();
    let kp = |row: &[f64], p: usize| row[(m + p) * dim..(m + p + 1) * dim].to_vec();
    let ag = |row: &[f64], j: usize| row[j * dim..(j + 1) * dim].to_vec();
    let disturbed: Vec<f64> = r.disturbances.iter().map(|d| d.t).collect();
    let mut length = 0.0;
    for w in r.trajectory.windows(2) {
        for j in 0..m {
            let (a, b) = (ag(&w[0].x, j), ag(&w[1].x, j));
            length += a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        }
        if disturbed.iter().any(|&t| (t - w[0].t).abs() < 1e-9) {
            continue;
        }
        for p in 0..s.system.keypoints.len() {
            let (a, b) = (kp(&w[0].x, p), kp(&w[1].x, p));
            if a == b {
                continue;
            }
            // A moving keypoint keeps its offset to some agent exactly.
            let rides = (0..m).any(|j| {
                let (ea, eb) = (ag(&w[0].x, j), ag(&w[1].x, j));
                (0..dim).all(|d| ((a[d] - ea[d]) - (b[d] - eb[d])).abs() <= 1e-12)
            });
            assert!(rides, "keypoint {p} moved on its own at t={}", w[0].t);
        }
    }
    assert!((length - r.total_length).abs() <= 1e-9, "{length} vs {}", r.total_length);
    let parts: f64 = r.agent_lengths.iter().sum();
    assert!((parts - r.total_length).abs() <= 1e-12);
}

#[test]
fn episode_invariants_hold() {
    let s = teleport_scenario(4);
    episode_invariants(&run(&s, Method::Goc), &s);
    let s = generate_stacking_scenario(2, 2, 5).unwrap();
    let r = run(&s, Method::Goc);
    assert!(r.success);
    episode_invariants(&r, &s);
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-0.5f64..0.5, -0.5f64..0.5, -0.5f64..0.5]
}

proptest! {
    #[test]
    fn world_steps_conserve_and_carry(
        start in point(),
        keypoints in [point(), point()],
        targets in proptest::collection::vec(point(), 1..20),
        attach in any::<bool>(),
    ) {
        let mut w = world(start, keypoints, 0);
        if attach {
            w.attached[0] = Some(0);
        }
        let offset: Vec<f64> = (0..3).map(|d| w.x.keypoint(0)[d] - w.x.agent(0)[d]).collect();
        let params = PlannerParams::default();
        let mut expected = 0.0;
        for t in targets {
            let before = w.x.agent(0).to_vec();
            w = step_world(w.clone(), &plan_to(&w, t, params.dt), params.dt, &[], &params);
            expected += (0..3).map(|d| (w.x.agent(0)[d] - before[d]).powi(2)).sum::<f64>().sqrt();
            for d in 0..3 {
                prop_assert!((w.x.agent(0)[d] - before[d]).abs() <= params.v_max * params.dt + 1e-15);
            }
            if attach {
                for d in 0..3 {
                    prop_assert!((w.x.keypoint(0)[d] - w.x.agent(0)[d] - offset[d]).abs() <= 1e-12);
                }
            } else {
                prop_assert_eq!(w.x.keypoint(0), &keypoints[0][..]);
            }
            prop_assert_eq!(w.x.keypoint(1), &keypoints[1][..]);
        }
        prop_assert!((w.total_length() - expected).abs() <= 1e-9);
    }

    #[test]
    fn half_steps_trace_the_same_path(start in point(), targets in proptest::collection::vec(point(), 1..20)) {
        let params = PlannerParams::default();
        let mut full = world(start, [[0.0; 3], [0.0; 3]], 0);
        let mut half = full.clone();
        for t in targets {
            let plan = plan_to(&full, t, params.dt);
            full = step_world(full, &plan, params.dt, &[], &params);
            let plan = plan_to(&half, t, params.dt);
            half = step_world(half, &plan, params.dt / 2.0, &[], &params);
            half = step_world(half, &plan, params.dt / 2.0, &[], &params);
        }
        let (a, b) = (full.total_length(), half.total_length());
        prop_assert!((a - b).abs() <= 0.01 * a.max(1e-12), "{} vs {}", a, b);
    }
}
