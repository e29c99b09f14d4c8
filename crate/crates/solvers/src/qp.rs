use nalgebra::{DMatrix, DVector};

use crate::dense::{cholesky_shifted, norm_inf};
use crate::report::{SolveReport, SolveStatus, SolverError};

/// Convex QP `min 1/2 x'Px + q'x  s.t.  l <= Ax <= u`.
///
/// Infinite entries of `l`/`u` mark one-sided rows. Equality rows have
/// `l == u`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self, SolverError> {
        let n = q.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(SolverError::Dimension(format!("P is {}x{}, q has {n} entries", p.nrows(), p.ncols())));
        }
        if a.ncols() != n && a.nrows() > 0 {
            return Err(SolverError::Dimension(format!("A has {} columns, expected {n}", a.ncols())));
        }
        let m = a.nrows();
        if l.len() != m || u.len() != m {
            return Err(SolverError::Dimension(format!("A has {m} rows but bounds have {} and {}", l.len(), u.len())));
        }
        if p.iter().chain(q.iter()).chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite("P, q or A".into()));
        }
        for i in 0..m {
            if l[i].is_nan() || u[i].is_nan() || l[i] == f64::INFINITY || u[i] == f64::NEG_INFINITY {
                return Err(SolverError::NonFinite(format!("bound row {i}")));
            }
            if l[i] > u[i] {
                return Err(SolverError::InvertedBounds { index: i, lower: l[i], upper: u[i] });
            }
        }
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                asym = asym.max((p[(i, j)] - p[(j, i)]).abs());
            }
        }
        let scale = p.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
        if asym > 1e-10 * scale {
            return Err(SolverError::NotSymmetric(asym));
        }
        let mut shifted = p.clone();
        for i in 0..n {
            shifted[(i, i)] += 1e-8 * scale;
        }
        if n > 0 && shifted.cholesky().is_none() {
            return Err(SolverError::NotPsd);
        }
        let a = if a.ncols() == n { a } else { DMatrix::zeros(0, n) };
        Ok(Self { p, q, a, l, u })
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.l
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Stationarity, primal infeasibility and complementarity errors of the
    /// pair `(x, y)` on the unscaled problem.
    pub fn kkt_errors(&self, x: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64) {
        let grad = &self.p * x + &self.q + self.a.transpose() * y;
        let ax = &self.a * x;
        let mut prim: f64 = 0.0;
        let mut comp: f64 = 0.0;
        for i in 0..ax.len() {
            prim = prim.max(self.l[i] - ax[i]).max(ax[i] - self.u[i]);
            let (yp, ym) = (y[i].max(0.0), (-y[i]).max(0.0));
            let cu = if self.u[i].is_finite() { yp * (self.u[i] - ax[i]).abs() } else { yp };
            let cl = if self.l[i].is_finite() { ym * (ax[i] - self.l[i]).abs() } else { ym };
            comp = comp.max(cu).max(cl);
        }
        (norm_inf(grad.as_slice()), prim, comp)
    }
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    pub max_iter: usize,
    /// ADMM stopping tolerances; meeting them triggers a polish attempt.
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Tolerance on each KKT error required for `Optimal`.
    pub kkt_tol: f64,
    pub eps_infeasible: f64,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub scaling_iters: usize,
    pub check_interval: usize,
    pub polish: bool,
    pub refine_iters: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            eps_abs: 1e-4,
            eps_rel: 1e-4,
            kkt_tol: 1e-6,
            eps_infeasible: 1e-6,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            scaling_iters: 10,
            check_interval: 25,
            polish: true,
            refine_iters: 5,
        }
    }
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;

struct Scaled {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn ruiz(prob: &QpProblem, iters: usize) -> Scaled {
    let n = prob.num_vars();
    let m = prob.num_rows();
    let mut p = prob.p.clone();
    let mut a = prob.a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let clip = |v: f64| if v < 1e-4 { 1.0 } else { v.min(1e4) };
    for _ in 0..iters {
        let mut dx = DVector::zeros(n);
        for j in 0..n {
            let mut nrm: f64 = 0.0;
            for i in 0..n {
                nrm = nrm.max(p[(i, j)].abs());
            }
            for i in 0..m {
                nrm = nrm.max(a[(i, j)].abs());
            }
            dx[j] = 1.0 / clip(nrm).sqrt();
        }
        let mut dz = DVector::zeros(m);
        for i in 0..m {
            let mut nrm: f64 = 0.0;
            for j in 0..n {
                nrm = nrm.max(a[(i, j)].abs());
            }
            dz[i] = 1.0 / clip(nrm).sqrt();
        }
        for j in 0..n {
            for i in 0..n {
                p[(i, j)] *= dx[i] * dx[j];
            }
            for i in 0..m {
                a[(i, j)] *= dz[i] * dx[j];
            }
        }
        d.component_mul_assign(&dx);
        e.component_mul_assign(&dz);
    }
    let mut q = prob.q.component_mul(&d);
    let mut col_mean = 0.0;
    if n > 0 {
        for j in 0..n {
            let mut nrm: f64 = 0.0;
            for i in 0..n {
                nrm = nrm.max(p[(i, j)].abs());
            }
            col_mean += nrm;
        }
        col_mean /= n as f64;
    }
    let qn = norm_inf(q.as_slice());
    let denom = col_mean.max(qn);
    let c = if denom < 1e-4 { 1.0 } else { (1.0 / denom).min(1e4) };
    p *= c;
    q *= c;
    let l = prob.l.component_mul(&e);
    let u = prob.u.component_mul(&e);
    Scaled { p, q, a, l, u, d, e, c }
}

fn is_equality(l: f64, u: f64) -> bool {
    l.is_finite() && u.is_finite() && u - l <= 1e-12 * (1.0 + l.abs())
}

fn row_rho(l: f64, u: f64, rho: f64) -> f64 {
    if !l.is_finite() && !u.is_finite() {
        RHO_MIN
    } else if is_equality(l, u) {
        (RHO_EQ_FACTOR * rho).min(RHO_MAX)
    } else {
        rho
    }
}

fn factor(s: &Scaled, sigma: f64, rho: &DVector<f64>) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let n = s.p.nrows();
    let mut k = s.p.clone();
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    let mut ra = s.a.clone();
    for i in 0..ra.nrows() {
        let r = rho[i];
        ra.row_mut(i).scale_mut(r);
    }
    k += s.a.transpose() * ra;
    cholesky_shifted(&k, 0.0).0
}

/// Solves a convex QP.
///
/// The ADMM loop runs on a Ruiz-equilibrated copy of the problem. Whenever
/// its residuals reach `eps_abs`/`eps_rel` the active set is guessed from
/// the dual iterate and the reduced KKT system is solved exactly
/// (polishing). `Optimal` is reported only once the unscaled KKT errors
/// are all below `kkt_tol`.
pub fn solve_qp(prob: &QpProblem, warm_start: Option<&[f64]>, opts: &QpOptions) -> SolveReport {
    let n = prob.num_vars();
    let m = prob.num_rows();
    let s = ruiz(prob, opts.scaling_iters);

    let mut x = DVector::zeros(n);
    if let Some(w) = warm_start {
        if w.len() == n {
            for j in 0..n {
                x[j] = w[j] / s.d[j];
            }
        }
    }
    let mut z = &s.a * &x;
    for i in 0..m {
        z[i] = z[i].max(s.l[i]).min(s.u[i]);
    }
    let mut y = DVector::zeros(m);

    let mut rho_base = opts.rho;
    let mut rho = DVector::from_fn(m, |i, _| row_rho(s.l[i], s.u[i], rho_base));
    let mut chol = factor(&s, opts.sigma, &rho);

    let mut eps_abs = opts.eps_abs;
    let mut eps_rel = opts.eps_rel;
    let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    let mut adapt_gap = opts.check_interval;
    let mut next_adapt = 0;
    let unscale = |xs: &DVector<f64>, ys: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        (xs.component_mul(&s.d), ys.component_mul(&s.e) / s.c)
    };

    let report = |x: DVector<f64>, y: DVector<f64>, status: SolveStatus, iters: usize, rho: f64| {
        let (stat, prim, _) = prob.kkt_errors(&x, &y);
        let objective = prob.objective(&x);
        SolveReport {
            x: x.as_slice().to_vec(),
            status,
            iterations: iters,
            inner_iterations: 0,
            primal_residual: prim,
            dual_residual: stat,
            objective,
            multipliers: y.as_slice().to_vec(),
            penalty: rho,
            history: Vec::new(),
        }
    };

    if m == 0 || n == 0 {
        // Unconstrained (or empty): one exact solve.
        if let Some((xp, yp)) = polish_with_set(prob, &vec![Active::Inactive; m], opts.refine_iters) {
            let (st, pr, co) = prob.kkt_errors(&xp, &yp);
            let status =
                if st.max(pr).max(co) <= opts.kkt_tol { SolveStatus::Optimal } else { SolveStatus::MaxIterations };
            return report(xp, yp, status, 0, rho_base);
        }
    }

    for iter in 1..=opts.max_iter {
        let x_prev = x.clone();
        let y_prev = y.clone();
        let mut rhs = &x * opts.sigma - &s.q;
        let w = rho.component_mul(&z) - &y;
        rhs += s.a.transpose() * w;
        let xt = chol.solve(&rhs);
        let zt = &s.a * &xt;
        x = &xt * opts.alpha + &x * (1.0 - opts.alpha);
        let zr = &zt * opts.alpha + &z * (1.0 - opts.alpha);
        for i in 0..m {
            let zn = (zr[i] + y[i] / rho[i]).max(s.l[i]).min(s.u[i]);
            y[i] += rho[i] * (zr[i] - zn);
            z[i] = zn;
        }

        if iter % opts.check_interval != 0 && iter != opts.max_iter {
            continue;
        }

        // Unscaled residuals.
        let ax_s = &s.a * &x;
        let px_s = &s.p * &x;
        let aty_s = s.a.transpose() * &y;
        let mut r_prim: f64 = 0.0;
        let mut ax_n: f64 = 0.0;
        let mut z_n: f64 = 0.0;
        for i in 0..m {
            r_prim = r_prim.max(((ax_s[i] - z[i]) / s.e[i]).abs());
            ax_n = ax_n.max((ax_s[i] / s.e[i]).abs());
            z_n = z_n.max((z[i] / s.e[i]).abs());
        }
        let mut r_dual: f64 = 0.0;
        let mut px_n: f64 = 0.0;
        let mut aty_n: f64 = 0.0;
        let mut q_n: f64 = 0.0;
        for j in 0..n {
            let inv = 1.0 / (s.d[j] * s.c);
            r_dual = r_dual.max(((px_s[j] + s.q[j] + aty_s[j]) * inv).abs());
            px_n = px_n.max((px_s[j] * inv).abs());
            aty_n = aty_n.max((aty_s[j] * inv).abs());
            q_n = q_n.max((s.q[j] * inv).abs());
        }
        let eps_p = eps_abs + eps_rel * ax_n.max(z_n);
        let eps_d = eps_abs + eps_rel * px_n.max(aty_n).max(q_n);

        let (xu, yu) = unscale(&x, &y);
        let (st, pr, co) = prob.kkt_errors(&xu, &yu);
        let err = st.max(pr).max(co);
        let admm_done = r_prim <= eps_p && r_dual <= eps_d;
        if opts.polish && (admm_done || err <= opts.kkt_tol) {
            if let Some((xp, yp)) = polish(prob, &xu, &yu, opts.refine_iters) {
                let (st, pr, co) = prob.kkt_errors(&xp, &yp);
                if st.max(pr).max(co) <= opts.kkt_tol {
                    return report(xp, yp, SolveStatus::Optimal, iter, rho_base);
                }
            }
        }
        if err <= opts.kkt_tol {
            return report(xu, yu, SolveStatus::Optimal, iter, rho_base);
        }
        if best.as_ref().map_or(true, |b| err < b.2) {
            best = Some((xu.clone(), yu.clone(), err));
        }
        if admm_done {
            eps_abs = (eps_abs * 0.1).max(1e-12);
            eps_rel = (eps_rel * 0.1).max(1e-12);
        }

        if primal_infeasible(prob, &s, &(&y - &y_prev), opts.eps_infeasible)
            || dual_infeasible(prob, &s, &(&x - &x_prev), opts.eps_infeasible)
        {
            return report(xu, yu, SolveStatus::Infeasible, iter, rho_base);
        }

        if opts.adaptive_rho && m > 0 && iter >= next_adapt {
            // The estimate uses the scaled iterates.
            let sp =
                norm_inf((&ax_s - &z).as_slice()) / norm_inf(ax_s.as_slice()).max(norm_inf(z.as_slice())).max(1e-30);
            let sd = norm_inf((&px_s + &s.q + &aty_s).as_slice())
                / norm_inf(px_s.as_slice()).max(norm_inf(aty_s.as_slice())).max(norm_inf(s.q.as_slice())).max(1e-30);
            let (pn, dn) = (sp, sd);
            let ratio = (pn / dn.max(1e-30)).sqrt();
            let new_rho = (rho_base * ratio).clamp(RHO_MIN, RHO_MAX);
            if new_rho > 5.0 * rho_base || new_rho < 0.2 * rho_base {
                rho_base = new_rho;
                rho = DVector::from_fn(m, |i, _| row_rho(s.l[i], s.u[i], rho_base));
                chol = factor(&s, opts.sigma, &rho);
                // Back off so rho cannot cycle forever.
                adapt_gap *= 2;
                next_adapt = iter + adapt_gap;
            }
        }
    }
    let (xb, yb, _) = best.unwrap_or_else(|| {
        let (xu, yu) = unscale(&x, &y);
        (xu, yu, f64::INFINITY)
    });
    report(xb, yb, SolveStatus::MaxIterations, opts.max_iter, rho_base)
}

fn primal_infeasible(prob: &QpProblem, s: &Scaled, dy_s: &DVector<f64>, eps: f64) -> bool {
    let m = prob.num_rows();
    if m == 0 {
        return false;
    }
    let dy = dy_s.component_mul(&s.e) / s.c;
    let nrm = norm_inf(dy.as_slice());
    if nrm < 1e-8 {
        return false;
    }
    let dy = dy / nrm;
    let mut support = 0.0;
    for i in 0..m {
        if dy[i] > eps {
            if !prob.u[i].is_finite() {
                return false;
            }
            support += prob.u[i] * dy[i];
        } else if dy[i] < -eps {
            if !prob.l[i].is_finite() {
                return false;
            }
            support += prob.l[i] * dy[i];
        }
    }
    if support >= -eps {
        return false;
    }
    let aty = prob.a.transpose() * dy;
    norm_inf(aty.as_slice()) < eps
}

fn dual_infeasible(prob: &QpProblem, s: &Scaled, dx_s: &DVector<f64>, eps: f64) -> bool {
    let dx = dx_s.component_mul(&s.d);
    let nrm = norm_inf(dx.as_slice());
    if nrm < 1e-8 {
        return false;
    }
    let dx = dx / nrm;
    if prob.q.dot(&dx) >= -eps {
        return false;
    }
    if norm_inf((&prob.p * &dx).as_slice()) >= eps {
        return false;
    }
    let adx = &prob.a * &dx;
    for i in 0..prob.num_rows() {
        if prob.u[i].is_finite() && adx[i] > eps {
            return false;
        }
        if prob.l[i].is_finite() && adx[i] < -eps {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Active {
    Inactive,
    Lower,
    Upper,
    Equal,
}

/// Guesses the active set from an approximate primal-dual pair and refines
/// it by a few exchange passes until the KKT solution is consistent.
fn polish(prob: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, refine: usize) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = prob.num_rows();
    let ax = &prob.a * x;
    let mut set: Vec<Active> = (0..m)
        .map(|i| {
            let (l, u) = (prob.l[i], prob.u[i]);
            if is_equality(l, u) {
                Active::Equal
            } else if l.is_finite() && ax[i] - l < -y[i] {
                Active::Lower
            } else if u.is_finite() && u - ax[i] < y[i] {
                Active::Upper
            } else {
                Active::Inactive
            }
        })
        .collect();
    let mut out = None;
    for _ in 0..25 {
        let (xp, yp) = polish_with_set(prob, &set, refine)?;
        let axp = &prob.a * &xp;
        let mut changed = false;
        for i in 0..m {
            let tol = 1e-9 * (1.0 + axp[i].abs());
            match set[i] {
                Active::Lower if yp[i] > 1e-12 => {
                    set[i] = Active::Inactive;
                    changed = true;
                }
                Active::Upper if yp[i] < -1e-12 => {
                    set[i] = Active::Inactive;
                    changed = true;
                }
                Active::Inactive if axp[i] < prob.l[i] - tol => {
                    set[i] = Active::Lower;
                    changed = true;
                }
                Active::Inactive if axp[i] > prob.u[i] + tol => {
                    set[i] = Active::Upper;
                    changed = true;
                }
                _ => {}
            }
        }
        out = Some((xp, yp));
        if !changed {
            break;
        }
    }
    out
}

fn polish_with_set(prob: &QpProblem, set: &[Active], refine: usize) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = prob.num_vars();
    let rows: Vec<usize> = (0..set.len()).filter(|&i| set[i] != Active::Inactive).collect();
    let k = rows.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -prob.q[j];
    }
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..n {
            let v = prob.a[(i, j)];
            kkt[(n + r, j)] = v;
            kkt[(j, n + r)] = v;
        }
        rhs[n + r] = match set[i] {
            Active::Upper => prob.u[i],
            _ => prob.l[i],
        };
    }
    let delta = 1e-9;
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += delta;
    }
    for r in 0..k {
        reg[(n + r, n + r)] -= delta;
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..refine {
        let res = &rhs - &kkt * &sol;
        if norm_inf(res.as_slice()) < 1e-14 {
            break;
        }
        sol += lu.solve(&res)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let xp = DVector::from_fn(n, |j, _| sol[j]);
    let mut yp = DVector::zeros(set.len());
    for (r, &i) in rows.iter().enumerate() {
        yp[i] = sol[n + r];
    }
    Some((xp, yp))
}
