//! Brute-force QP oracle: enumerate every active set, solve the equality
//! constrained KKT system by Gaussian elimination and keep the best point
//! that is primal feasible with correctly signed multipliers.
//!
//! Problems are given row-major: `p` is n*n, `a` is m*n.

#![allow(dead_code)]

pub struct DenseQp {
    pub n: usize,
    pub m: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub a: Vec<f64>,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
}

pub struct OracleSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
}

impl DenseQp {
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.n {
            v += self.q[i] * x[i];
            for j in 0..self.n {
                v += 0.5 * x[i] * self.p[i * self.n + j] * x[j];
            }
        }
        v
    }

    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        (0..self.n).map(|j| self.a[i * self.n + j] * x[j]).sum()
    }
}

/// Solves `k z = b` in place with partial pivoting. Returns None when the
/// system is numerically singular.
fn gauss(mut k: Vec<f64>, mut b: Vec<f64>, dim: usize) -> Option<Vec<f64>> {
    for col in 0..dim {
        let piv = (col..dim).max_by(|&r, &s| k[r * dim + col].abs().total_cmp(&k[s * dim + col].abs()))?;
        if k[piv * dim + col].abs() < 1e-11 {
            return None;
        }
        if piv != col {
            for c in 0..dim {
                k.swap(piv * dim + c, col * dim + c);
            }
            b.swap(piv, col);
        }
        for r in col + 1..dim {
            let f = k[r * dim + col] / k[col * dim + col];
            if f != 0.0 {
                for c in col..dim {
                    k[r * dim + c] -= f * k[col * dim + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut z = vec![0.0; dim];
    for r in (0..dim).rev() {
        let mut s = b[r];
        for c in r + 1..dim {
            s -= k[r * dim + c] * z[c];
        }
        z[r] = s / k[r * dim + r];
    }
    Some(z)
}

pub fn solve(qp: &DenseQp) -> Option<OracleSolution> {
    let (n, m) = (qp.n, qp.m);
    let mut best: Option<OracleSolution> = None;
    let mut state = vec![0u8; m];
    loop {
        let skip = (0..m).any(|i| {
            let eq = qp.l[i] == qp.u[i];
            (eq && state[i] != 1)
                || (state[i] == 1 && !qp.l[i].is_finite())
                || (state[i] == 2 && (eq || !qp.u[i].is_finite()))
        });
        if !skip {
            let rows: Vec<usize> = (0..m).filter(|&i| state[i] != 0).collect();
            let dim = n + rows.len();
            let mut k = vec![0.0; dim * dim];
            let mut b = vec![0.0; dim];
            for i in 0..n {
                for j in 0..n {
                    k[i * dim + j] = qp.p[i * n + j];
                }
                b[i] = -qp.q[i];
            }
            for (r, &i) in rows.iter().enumerate() {
                for j in 0..n {
                    k[(n + r) * dim + j] = qp.a[i * n + j];
                    k[j * dim + n + r] = qp.a[i * n + j];
                }
                b[n + r] = if state[i] == 1 { qp.l[i] } else { qp.u[i] };
            }
            if let Some(z) = gauss(k, b, dim) {
                let x = z[..n].to_vec();
                let mut y = vec![0.0; m];
                for (r, &i) in rows.iter().enumerate() {
                    y[i] = z[n + r];
                }
                let feasible = (0..m).all(|i| {
                    let ax = qp.row_dot(i, &x);
                    ax >= qp.l[i] - 1e-9 && ax <= qp.u[i] + 1e-9
                });
                let signs = (0..m).all(|i| match state[i] {
                    1 if qp.l[i] != qp.u[i] => y[i] <= 1e-9,
                    2 => y[i] >= -1e-9,
                    _ => true,
                });
                if feasible && signs {
                    let objective = qp.objective(&x);
                    if best.as_ref().map_or(true, |s| objective < s.objective) {
                        best = Some(OracleSolution { x, y, objective });
                    }
                }
            }
        }
        let mut i = 0;
        loop {
            if i == m {
                return best;
            }
            state[i] += 1;
            if state[i] < 3 {
                break;
            }
            state[i] = 0;
            i += 1;
        }
    }
}

/// Random strictly convex QP that is feasible by construction: bounds are
/// placed around `A x0` for a random `x0`, with a few equality and
/// one-sided rows mixed in.
pub fn random_qp<R: rand::Rng>(rng: &mut R) -> DenseQp {
    let n = rng.gen_range(2..=10);
    let m = rng.gen_range(1..=10);
    let f = rng.gen_range(1..=n);
    let mut g = vec![0.0; f * n];
    for v in g.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (0..f).map(|k| g[k * n + i] * g[k * n + j]).sum::<f64>();
        }
        p[i * n + i] += 0.1;
    }
    let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let a: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let max_eq = (n - 1).min(2);
    let mut eqs = 0;
    let mut l = vec![0.0; m];
    let mut u = vec![0.0; m];
    for i in 0..m {
        let ax: f64 = (0..n).map(|j| a[i * n + j] * x0[j]).sum();
        let kind = rng.gen_range(0..10);
        if kind == 0 && eqs < max_eq {
            eqs += 1;
            l[i] = ax;
            u[i] = ax;
        } else if kind <= 2 {
            l[i] = f64::NEG_INFINITY;
            u[i] = ax + rng.gen_range(0.0..0.5);
        } else if kind <= 4 {
            l[i] = ax - rng.gen_range(0.0..0.5);
            u[i] = f64::INFINITY;
        } else {
            l[i] = ax - rng.gen_range(0.0..0.5);
            u[i] = ax + rng.gen_range(0.0..0.5);
        }
    }
    DenseQp { n, m, p, q, a, l, u }
}
