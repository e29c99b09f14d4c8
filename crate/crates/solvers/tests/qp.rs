mod support;

use approx::assert_abs_diff_eq;
use goc_solvers::{solve_qp, QpOptions, QpProblem, SolveStatus, SolverError};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::kkt_oracle::{self, DenseQp};

fn to_problem(qp: &DenseQp) -> QpProblem {
    QpProblem::new(
        DMatrix::from_row_slice(qp.n, qp.n, &qp.p),
        DVector::from_column_slice(&qp.q),
        DMatrix::from_row_slice(qp.m, qp.n, &qp.a),
        DVector::from_column_slice(&qp.l),
        DVector::from_column_slice(&qp.u),
    )
    .unwrap()
}

#[test]
fn unconstrained_identity() {
    let p = QpProblem::new(
        DMatrix::identity(3, 3),
        DVector::zeros(3),
        DMatrix::zeros(0, 3),
        DVector::zeros(0),
        DVector::zeros(0),
    )
    .unwrap();
    let r = solve_qp(&p, None, &QpOptions::default());
    assert_eq!(r.status, SolveStatus::Optimal);
    for v in r.x {
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }
}

#[test]
fn symmetric_equality() {
    let p = QpProblem::new(
        DMatrix::identity(2, 2) * 2.0,
        DVector::zeros(2),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::from_element(1, 2.0),
        DVector::from_element(1, 2.0),
    )
    .unwrap();
    let r = solve_qp(&p, None, &QpOptions::default());
    assert_eq!(r.status, SolveStatus::Optimal);
    assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-8);
    assert_abs_diff_eq!(r.x[1], 1.0, epsilon = 1e-8);
    assert_abs_diff_eq!(r.objective, 2.0, epsilon = 1e-8);
}

#[test]
fn matches_active_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..40 {
        let qp = kkt_oracle::random_qp(&mut rng);
        let want = kkt_oracle::solve(&qp).expect("oracle found no KKT point");
        let r = solve_qp(&to_problem(&qp), None, &QpOptions::default());
        assert_eq!(r.status, SolveStatus::Optimal, "case {case}");
        for (a, b) in r.x.iter().zip(&want.x) {
            assert!((a - b).abs() <= 1e-6, "case {case}: {a} vs {b}");
        }
        assert!((r.objective - want.objective).abs() <= 1e-6, "case {case}");
    }
}

#[test]
fn detects_infeasible_rows() {
    // x >= 1 and x <= 0.
    let p = QpProblem::new(
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        DVector::from_column_slice(&[1.0, f64::NEG_INFINITY]),
        DVector::from_column_slice(&[f64::INFINITY, 0.0]),
    )
    .unwrap();
    let r = solve_qp(&p, None, &QpOptions::default());
    assert_eq!(r.status, SolveStatus::Infeasible);
}

#[test]
fn rejects_bad_input() {
    let asym = QpProblem::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
        DVector::zeros(2),
        DMatrix::zeros(0, 2),
        DVector::zeros(0),
        DVector::zeros(0),
    );
    assert!(matches!(asym, Err(SolverError::NotSymmetric(_))));
    let indefinite = QpProblem::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        DVector::zeros(2),
        DMatrix::zeros(0, 2),
        DVector::zeros(0),
        DVector::zeros(0),
    );
    assert!(matches!(indefinite, Err(SolverError::NotPsd)));
    let inverted = QpProblem::new(
        DMatrix::identity(1, 1),
        DVector::zeros(1),
        DMatrix::identity(1, 1),
        DVector::from_element(1, 1.0),
        DVector::from_element(1, 0.0),
    );
    assert!(matches!(inverted, Err(SolverError::InvertedBounds { .. })));
}

/// A timing problem (singular P, 280 rows) on which the penalty update used
/// to cycle with period ~1500 iterations. Reference objective from OSQP at
/// eps 1e-9.
#[test]
fn penalty_updates_settle() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/rho_cycle_qp.json")).unwrap();
    let d: serde_json::Value = serde_json::from_str(&text).unwrap();
    let nums = |k: &str, missing: f64| -> Vec<f64> {
        d[k].as_array().unwrap().iter().map(|v| v.as_f64().unwrap_or(missing)).collect()
    };
    let (n, m) = (d["n"].as_u64().unwrap() as usize, d["m"].as_u64().unwrap() as usize);
    let prob = QpProblem::new(
        DMatrix::from_row_slice(n, n, &nums("p", 0.0)),
        DVector::from_vec(nums("q", 0.0)),
        DMatrix::from_row_slice(m, n, &nums("a", 0.0)),
        DVector::from_vec(nums("l", f64::NEG_INFINITY)),
        DVector::from_vec(nums("u", f64::INFINITY)),
    )
    .unwrap();
    let r = solve_qp(&prob, None, &QpOptions::default());
    assert_eq!(r.status, SolveStatus::Optimal, "{} iterations", r.iterations);
    assert!((r.objective - 6.953490965976957).abs() < 1e-6, "{}", r.objective);
}

#[test]
fn warm_start_is_accepted() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let qp = kkt_oracle::random_qp(&mut rng);
    let prob = to_problem(&qp);
    let cold = solve_qp(&prob, None, &QpOptions::default());
    let warm = solve_qp(&prob, Some(&cold.x), &QpOptions::default());
    assert_eq!(warm.status, SolveStatus::Optimal);
    assert!(warm.iterations <= cold.iterations);
    for (a, b) in warm.x.iter().zip(&cold.x) {
        assert!((a - b).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deterministic(seed in any::<u64>()) {
        let qp = kkt_oracle::random_qp(&mut ChaCha8Rng::seed_from_u64(seed));
        let prob = to_problem(&qp);
        let a = solve_qp(&prob, None, &QpOptions::default());
        let b = solve_qp(&prob, None, &QpOptions::default());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn cost_scaling_leaves_argmin(seed in any::<u64>(), lambda in 0.01f64..100.0) {
        let qp = kkt_oracle::random_qp(&mut ChaCha8Rng::seed_from_u64(seed));
        let base = solve_qp(&to_problem(&qp), None, &QpOptions::default());
        let scaled = DenseQp {
            p: qp.p.iter().map(|v| v * lambda).collect(),
            q: qp.q.iter().map(|v| v * lambda).collect(),
            ..qp
        };
        let r = solve_qp(&to_problem(&scaled), None, &QpOptions::default());
        prop_assert_eq!(base.status, SolveStatus::Optimal);
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        for (a, b) in r.x.iter().zip(&base.x) {
            prop_assert!((a - b).abs() <= 1e-8, "{} vs {}", a, b);
        }
    }

    #[test]
    fn optimal_means_kkt(seed in any::<u64>()) {
        let qp = kkt_oracle::random_qp(&mut ChaCha8Rng::seed_from_u64(seed));
        let prob = to_problem(&qp);
        let r = solve_qp(&prob, None, &QpOptions::default());
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        let (st, pr, co) = prob.kkt_errors(&DVector::from_column_slice(&r.x), &DVector::from_column_slice(&r.multipliers));
        prop_assert!(st <= 1e-6 && pr <= 1e-6 && co <= 1e-6);
    }
}
