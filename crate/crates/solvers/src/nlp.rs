use nalgebra::{DMatrix, DVector};

use crate::dense::{cholesky_shifted, dvec, norm_inf, project_box};
use crate::report::{OuterRecord, SolveReport, SolveStatus};

/// Row-compressed sparse Jacobian, filled one row at a time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseRows {
    pub fn new() -> Self {
        Self { row_ptr: vec![0], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn clear(&mut self) {
        self.row_ptr.clear();
        self.row_ptr.push(0);
        self.cols.clear();
        self.vals.clear();
    }

    pub fn push(&mut self, col: usize, val: f64) {
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn finish_row(&mut self) {
        self.row_ptr.push(self.cols.len());
    }

    pub fn num_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn to_dense(&self, ncols: usize) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.num_rows(), ncols);
        for i in 0..self.num_rows() {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

/// Smooth NLP `min f(x)  s.t.  g(x) <= 0,  lo <= x <= hi`.
pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn lower(&self) -> &[f64];
    fn upper(&self) -> &[f64];
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], grad: &mut [f64]);
    fn constraints(&self, x: &[f64], g: &mut [f64]);
    fn jacobian(&self, x: &[f64], jac: &mut SparseRows);

    /// Writes `∇²f + Σ mult_i ∇²g_i` into `h` (zeroed by the caller) and
    /// returns true, or returns false when no exact Hessian is available.
    fn lagrangian_hessian(&self, _x: &[f64], _mult: &[f64], _h: &mut DMatrix<f64>) -> bool {
        false
    }
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64>;
type VecFn = Box<dyn Fn(&[f64], &mut [f64])>;
type JacFn = Box<dyn Fn(&[f64], &mut DMatrix<f64>)>;
type HessFn = Box<dyn Fn(&[f64], &[f64], &mut DMatrix<f64>)>;

/// Closure-backed problem with a dense Jacobian. Handy for tests and tiny
/// problems.
pub struct ClosureNlp {
    lo: Vec<f64>,
    hi: Vec<f64>,
    m: usize,
    f: ScalarFn,
    grad: VecFn,
    g: VecFn,
    jac: JacFn,
    hess: Option<HessFn>,
}

impl ClosureNlp {
    pub fn new(
        lo: Vec<f64>,
        hi: Vec<f64>,
        f: impl Fn(&[f64]) -> f64 + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + 'static,
    ) -> Self {
        assert_eq!(lo.len(), hi.len());
        Self {
            lo,
            hi,
            m: 0,
            f: Box::new(f),
            grad: Box::new(grad),
            g: Box::new(|_, _| {}),
            jac: Box::new(|_, _| {}),
            hess: None,
        }
    }

    pub fn unbounded(
        n: usize,
        f: impl Fn(&[f64]) -> f64 + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + 'static,
    ) -> Self {
        Self::new(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n], f, grad)
    }

    /// `jac` receives an `m x n` zeroed matrix.
    pub fn with_constraints(
        mut self,
        m: usize,
        g: impl Fn(&[f64], &mut [f64]) + 'static,
        jac: impl Fn(&[f64], &mut DMatrix<f64>) + 'static,
    ) -> Self {
        self.m = m;
        self.g = Box::new(g);
        self.jac = Box::new(jac);
        self
    }

    pub fn with_hessian(mut self, h: impl Fn(&[f64], &[f64], &mut DMatrix<f64>) + 'static) -> Self {
        self.hess = Some(Box::new(h));
        self
    }
}

impl NlpProblem for ClosureNlp {
    fn dim(&self) -> usize {
        self.lo.len()
    }
    fn num_constraints(&self) -> usize {
        self.m
    }
    fn lower(&self) -> &[f64] {
        &self.lo
    }
    fn upper(&self) -> &[f64] {
        &self.hi
    }
    fn objective(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.grad)(x, grad)
    }
    fn constraints(&self, x: &[f64], g: &mut [f64]) {
        (self.g)(x, g)
    }
    fn jacobian(&self, x: &[f64], jac: &mut SparseRows) {
        let n = self.dim();
        let mut d = DMatrix::zeros(self.m, n);
        (self.jac)(x, &mut d);
        jac.clear();
        for i in 0..self.m {
            for j in 0..n {
                if d[(i, j)] != 0.0 {
                    jac.push(j, d[(i, j)]);
                }
            }
            jac.finish_row();
        }
    }
    fn lagrangian_hessian(&self, x: &[f64], mult: &[f64], h: &mut DMatrix<f64>) -> bool {
        match &self.hess {
            Some(hf) => {
                hf(x, mult, h);
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NlpOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_init: f64,
    pub penalty_max: f64,
    pub penalty_factor: f64,
    /// Outer iterations over which the violation must change by a relative
    /// 1e-10 before the problem is declared infeasible.
    pub stagnation_window: usize,
}

impl Default for NlpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            opt_tol: 1e-5,
            max_outer: 60,
            max_inner: 200,
            penalty_init: 10.0,
            penalty_max: 1e12,
            penalty_factor: 10.0,
            stagnation_window: 25,
        }
    }
}

/// Starting point, optionally with the multipliers and penalty of a
/// previous solve.
#[derive(Debug, Clone, Default)]
pub struct NlpStart {
    pub x: Vec<f64>,
    pub multipliers: Option<Vec<f64>>,
    pub penalty: Option<f64>,
}

impl NlpStart {
    pub fn cold(x: Vec<f64>) -> Self {
        Self { x, multipliers: None, penalty: None }
    }

    pub fn from_report(r: &SolveReport) -> Self {
        Self { x: r.x.clone(), multipliers: Some(r.multipliers.clone()), penalty: Some(r.penalty) }
    }
}

struct Work<'a, P: NlpProblem + ?Sized> {
    prob: &'a P,
    n: usize,
    m: usize,
    g: Vec<f64>,
    grad: Vec<f64>,
    jac: SparseRows,
    evals: usize,
}

impl<'a, P: NlpProblem + ?Sized> Work<'a, P> {
    /// Augmented Lagrangian value at `x`.
    fn value(&mut self, x: &[f64], lam: &[f64], rho: f64) -> f64 {
        self.evals += 1;
        let mut v = self.prob.objective(x);
        if self.m > 0 {
            self.prob.constraints(x, &mut self.g);
            for i in 0..self.m {
                let t = (lam[i] + rho * self.g[i]).max(0.0);
                v += (t * t - lam[i] * lam[i]) / (2.0 * rho);
            }
        }
        v
    }

    /// Gradient of the augmented Lagrangian; leaves `g`, `jac` and the
    /// shifted multipliers `mu` current at `x`.
    fn gradient(&mut self, x: &[f64], lam: &[f64], rho: f64, mu: &mut [f64], out: &mut [f64]) {
        self.prob.gradient(x, &mut self.grad);
        out.copy_from_slice(&self.grad);
        if self.m > 0 {
            self.prob.constraints(x, &mut self.g);
            self.prob.jacobian(x, &mut self.jac);
            for i in 0..self.m {
                mu[i] = (lam[i] + rho * self.g[i]).max(0.0);
                if mu[i] > 0.0 {
                    for (j, v) in self.jac.row(i) {
                        out[j] += mu[i] * v;
                    }
                }
            }
        }
    }

    fn violation(&mut self, x: &[f64]) -> f64 {
        if self.m == 0 {
            return 0.0;
        }
        self.prob.constraints(x, &mut self.g);
        self.g.iter().fold(0.0_f64, |a, &v| a.max(v))
    }
}

fn projected_gradient_norm(x: &[f64], grad: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut r: f64 = 0.0;
    for j in 0..x.len() {
        let p = (x[j] - grad[j]).max(lo[j]).min(hi[j]);
        r = r.max((x[j] - p).abs());
    }
    r
}

/// Solves a smooth inequality-constrained NLP to a local KKT point.
///
/// Outer loop: multiplier update `λ ← max(0, λ + ρ g)` with penalty growth
/// when the violation does not halve (or grows). Inner loop: projected
/// Newton on the bound-constrained augmented Lagrangian, using the exact
/// Lagrangian Hessian when the problem provides one and a damped BFGS
/// model otherwise, plus the generalized Gauss-Newton term of the penalty.
pub fn solve_nlp<P: NlpProblem + ?Sized>(prob: &P, start: &NlpStart, opts: &NlpOptions) -> SolveReport {
    let n = prob.dim();
    let m = prob.num_constraints();
    let lo = prob.lower().to_vec();
    let hi = prob.upper().to_vec();
    let mut x = start.x.clone();
    assert_eq!(x.len(), n, "start point has wrong dimension");
    project_box(&mut x, &lo, &hi);

    let mut lam = match &start.multipliers {
        Some(l) if l.len() == m => l.iter().map(|v| v.max(0.0)).collect(),
        _ => vec![0.0; m],
    };
    let mut rho = start.penalty.filter(|r| *r > 0.0).unwrap_or(opts.penalty_init).min(opts.penalty_max);

    let mut w = Work { prob, n, m, g: vec![0.0; m], grad: vec![0.0; n], jac: SparseRows::new(), evals: 0 };
    let mut mu = vec![0.0; m];
    let mut gl = vec![0.0; n];
    let mut history = Vec::new();
    let mut inner_total = 0;
    let mut bfgs: Option<DMatrix<f64>> = None;

    let finish = |x: Vec<f64>, status, iters, inner, viol, pg, mu: Vec<f64>, rho, history| {
        let objective = prob.objective(&x);
        SolveReport {
            x,
            status,
            iterations: iters,
            inner_iterations: inner,
            primal_residual: viol,
            dual_residual: pg,
            objective,
            multipliers: mu,
            penalty: rho,
            history,
        }
    };

    // A start that is already a KKT point for its multipliers is returned as is.
    let lgrad = lagrangian_grad(&mut w, &x, &lam);
    let viol0 = w.violation(&x);
    let pg0 = projected_gradient_norm(&x, &lgrad, &lo, &hi);
    if viol0 <= opts.feas_tol && pg0 <= opts.opt_tol && complementarity(&lam, &w.g) <= opts.opt_tol {
        return finish(x, SolveStatus::Optimal, 0, 0, viol0, pg0, lam, rho, history);
    }

    let mut prev_viol = f64::INFINITY;
    let mut stagnation_ref = (viol0, 0usize);
    let mut inner_tol = (1e-2_f64).max(opts.opt_tol);
    let mut last_pg = pg0;

    for outer in 1..=opts.max_outer {
        let tol = if m == 0 { opts.opt_tol } else { inner_tol };
        let (iters, _) = inner_solve(&mut w, &mut x, &lam, rho, &lo, &hi, tol, opts.max_inner, &mut bfgs);
        inner_total += iters;
        let viol = w.violation(&x);

        w.gradient(&x, &lam, rho, &mut mu, &mut gl);
        let pg_now = projected_gradient_norm(&x, &gl, &lo, &hi);
        lam.copy_from_slice(&mu);

        if viol <= opts.feas_tol && pg_now <= opts.opt_tol && complementarity(&lam, &w.g) <= opts.opt_tol {
            history.push(OuterRecord { violation: viol, penalty: rho });
            return finish(x, SolveStatus::Optimal, outer, inner_total, viol, pg_now, lam, rho, history);
        }

        let grow = viol > prev_viol || (viol > opts.feas_tol && viol > 0.5 * prev_viol);
        if grow {
            if rho >= opts.penalty_max {
                history.push(OuterRecord { violation: viol, penalty: rho });
                return finish(x, SolveStatus::Infeasible, outer, inner_total, viol, pg_now, lam, rho, history);
            }
            rho = (rho * opts.penalty_factor).min(opts.penalty_max);
        }
        history.push(OuterRecord { violation: viol, penalty: rho });
        inner_tol = (inner_tol * 0.1).max(opts.opt_tol);

        if viol > opts.feas_tol {
            let rel = (viol - stagnation_ref.0).abs() / stagnation_ref.0.abs().max(1e-300);
            if rel >= 1e-10 {
                stagnation_ref = (viol, outer);
            } else if outer - stagnation_ref.1 >= opts.stagnation_window {
                return finish(x, SolveStatus::Infeasible, outer, inner_total, viol, pg_now, lam, rho, history);
            }
        } else {
            stagnation_ref = (viol, outer);
        }
        prev_viol = viol;
        last_pg = pg_now;
    }
    let viol = w.violation(&x);
    finish(x, SolveStatus::MaxIterations, opts.max_outer, inner_total, viol, last_pg, lam, rho, history)
}

fn complementarity(lam: &[f64], g: &[f64]) -> f64 {
    lam.iter().zip(g).fold(0.0_f64, |a, (l, g)| a.max(l * (-g).max(0.0)))
}

#[allow(clippy::too_many_arguments)]
fn inner_solve<P: NlpProblem + ?Sized>(
    w: &mut Work<'_, P>,
    x: &mut Vec<f64>,
    lam: &[f64],
    rho: f64,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    max_iter: usize,
    bfgs: &mut Option<DMatrix<f64>>,
) -> (usize, f64) {
    let n = w.n;
    let m = w.m;
    let mut mu = vec![0.0; m];
    let mut grad = vec![0.0; n];
    let mut f = w.value(x, lam, rho);
    w.gradient(x, lam, rho, &mut mu, &mut grad);
    let mut pg = projected_gradient_norm(x, &grad, lo, hi);
    let mut hess = DMatrix::zeros(n, n);
    let mut free = vec![true; n];
    for it in 0..max_iter {
        if pg <= tol {
            return (it, pg);
        }
        // Model: Lagrangian Hessian at shifted multipliers + penalty curvature.
        hess.fill(0.0);
        let exact = w.prob.lagrangian_hessian(x, &mu, &mut hess);
        if !exact {
            let b = bfgs.get_or_insert_with(|| DMatrix::identity(n, n));
            hess.copy_from(b);
        }
        for i in 0..m {
            if mu[i] > 0.0 {
                let row: Vec<(usize, f64)> = w.jac.row(i).collect();
                for &(a, va) in &row {
                    for &(b, vb) in &row {
                        hess[(a, b)] += rho * va * vb;
                    }
                }
            }
        }

        let eps_act = pg.min(1e-3);
        for j in 0..n {
            free[j] = !((x[j] - lo[j] <= eps_act && grad[j] > 0.0) || (hi[j] - x[j] <= eps_act && grad[j] < 0.0));
        }
        let idx: Vec<usize> = (0..n).filter(|&j| free[j]).collect();
        let mut d = vec![0.0; n];
        if !idx.is_empty() {
            let k = idx.len();
            let mut hf = DMatrix::zeros(k, k);
            let mut gf = DVector::zeros(k);
            for (a, &ja) in idx.iter().enumerate() {
                gf[a] = -grad[ja];
                for (b, &jb) in idx.iter().enumerate() {
                    hf[(a, b)] = hess[(ja, jb)];
                }
            }
            let (ch, _) = cholesky_shifted(&hf, 0.0);
            let df = ch.solve(&gf);
            for (a, &ja) in idx.iter().enumerate() {
                d[ja] = df[a];
            }
        }
        for j in 0..n {
            if !free[j] {
                let h = hess[(j, j)].max(1e-8);
                d[j] = -grad[j] / h;
            }
        }

        // Armijo search along the projection arc.
        let mut alpha = 1.0;
        let mut accepted = false;
        let mut xn = vec![0.0; n];
        let mut fnew = f;
        for _ in 0..50 {
            for j in 0..n {
                xn[j] = (x[j] + alpha * d[j]).max(lo[j]).min(hi[j]);
            }
            fnew = w.value(&xn, lam, rho);
            let mut decrease = 0.0;
            for j in 0..n {
                decrease += grad[j] * (x[j] - xn[j]);
            }
            if fnew.is_finite() && f - fnew >= 1e-4 * decrease.max(0.0) && fnew <= f {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Fall back to a projected steepest-descent step.
            let mut step = 1.0 / hess.diagonal().iter().fold(1e-8_f64, |a, v| a.max(v.abs()));
            for _ in 0..60 {
                for j in 0..n {
                    xn[j] = (x[j] - step * grad[j]).max(lo[j]).min(hi[j]);
                }
                fnew = w.value(&xn, lam, rho);
                let mut decrease = 0.0;
                for j in 0..n {
                    decrease += grad[j] * (x[j] - xn[j]);
                }
                if fnew.is_finite() && f - fnew >= 1e-4 * decrease.max(0.0) && fnew <= f {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                if bfgs.is_some() && !exact {
                    *bfgs = Some(DMatrix::identity(n, n));
                }
                return (it + 1, pg);
            }
        }

        let old_lgrad = if exact { None } else { Some(lagrangian_grad(w, x, &mu)) };
        let s: Vec<f64> = (0..n).map(|j| xn[j] - x[j]).collect();
        x.copy_from_slice(&xn);
        f = fnew;
        w.gradient(x, lam, rho, &mut mu, &mut grad);
        pg = projected_gradient_norm(x, &grad, lo, hi);
        if let (Some(old), Some(b)) = (old_lgrad, bfgs.as_mut()) {
            let new = lagrangian_grad(w, x, &mu);
            let yv: Vec<f64> = (0..n).map(|j| new[j] - old[j]).collect();
            damped_bfgs(b, &s, &yv);
        }
        if norm_inf(&s) <= 1e-15 * (1.0 + norm_inf(x)) {
            return (it + 1, pg);
        }
    }
    (max_iter, pg)
}

/// Gradient of `f + mu' g` at `x` (no penalty term).
fn lagrangian_grad<P: NlpProblem + ?Sized>(w: &mut Work<'_, P>, x: &[f64], mu: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.n];
    w.prob.gradient(x, &mut out);
    if w.m > 0 {
        w.prob.jacobian(x, &mut w.jac);
        for (i, &mi) in mu.iter().enumerate() {
            if mi > 0.0 {
                for (j, v) in w.jac.row(i) {
                    out[j] += mi * v;
                }
            }
        }
    }
    out
}

/// Powell-damped BFGS update keeping `b` positive definite.
fn damped_bfgs(b: &mut DMatrix<f64>, s: &[f64], y: &[f64]) {
    let s = dvec(s);
    let y = dvec(y);
    let bs = &*b * &s;
    let sbs = s.dot(&bs);
    if sbs <= 1e-300 {
        return;
    }
    let sy = s.dot(&y);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r = &y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if sr <= 1e-300 {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &r * r.transpose() / sr;
}
