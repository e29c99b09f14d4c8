//! The three analytic NLP fixtures, each with a known solution.

#![allow(dead_code)]

use goc_solvers::ClosureNlp;

/// min |x - (1,1)|^2  s.t.  x0 <= 0. Solution (0, 1).
pub fn projection(exact_hessian: bool) -> ClosureNlp {
    let p = ClosureNlp::unbounded(
        2,
        |x| (x[0] - 1.0).powi(2) + (x[1] - 1.0).powi(2),
        |x, g| {
            g[0] = 2.0 * (x[0] - 1.0);
            g[1] = 2.0 * (x[1] - 1.0);
        },
    )
    .with_constraints(1, |x, g| g[0] = x[0], |_, j| j[(0, 0)] = 1.0);
    if exact_hessian {
        p.with_hessian(|_, _, h| {
            h[(0, 0)] = 2.0;
            h[(1, 1)] = 2.0;
        })
    } else {
        p
    }
}

/// min x + y  s.t.  x^2 + y^2 <= 1. Solution -(1,1)/sqrt(2), value -sqrt(2).
pub fn disc(exact_hessian: bool) -> ClosureNlp {
    let p = ClosureNlp::unbounded(
        2,
        |x| x[0] + x[1],
        |_, g| {
            g[0] = 1.0;
            g[1] = 1.0;
        },
    )
    .with_constraints(
        1,
        |x, g| g[0] = x[0] * x[0] + x[1] * x[1] - 1.0,
        |x, j| {
            j[(0, 0)] = 2.0 * x[0];
            j[(0, 1)] = 2.0 * x[1];
        },
    );
    if exact_hessian {
        p.with_hessian(|_, m, h| {
            h[(0, 0)] = 2.0 * m[0];
            h[(1, 1)] = 2.0 * m[0];
        })
    } else {
        p
    }
}

/// Rosenbrock, unconstrained. Solution (1, 1).
pub fn rosenbrock(exact_hessian: bool) -> ClosureNlp {
    let p = ClosureNlp::unbounded(
        2,
        |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
        |x, g| {
            g[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            g[1] = 200.0 * (x[1] - x[0] * x[0]);
        },
    );
    if exact_hessian {
        p.with_hessian(|x, _, h| {
            h[(0, 0)] = 2.0 - 400.0 * x[1] + 1200.0 * x[0] * x[0];
            h[(0, 1)] = -400.0 * x[0];
            h[(1, 0)] = -400.0 * x[0];
            h[(1, 1)] = 200.0;
        })
    } else {
        p
    }
}
