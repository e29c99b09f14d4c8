//! Row expressions shared by constraint evaluation and the waypoint NLP.
//!
//! Every primitive compiles to rows that are either affine in the decision
//! vector or a signed Euclidean norm of an affine vector. Both have cheap
//! exact first and second derivatives.

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub c: f64,
}

impl LinExpr {
    pub fn var(col: usize) -> Self {
        Self { terms: vec![(col, 1.0)], c: 0.0 }
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), c }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().fold(self.c, |s, &(j, v)| s + v * x[j])
    }

    /// `self + s * other`, merging duplicate columns.
    pub fn add_scaled(&self, other: &LinExpr, s: f64) -> LinExpr {
        let mut terms = self.terms.clone();
        for &(j, v) in &other.terms {
            match terms.iter_mut().find(|(k, _)| *k == j) {
                Some(t) => t.1 += s * v,
                None => terms.push((j, s * v)),
            }
        }
        terms.retain(|t| t.1 != 0.0);
        LinExpr { terms, c: self.c + s * other.c }
    }

    pub fn scaled(&self, s: f64) -> LinExpr {
        LinExpr { terms: self.terms.iter().map(|&(j, v)| (j, s * v)).collect(), c: self.c * s }
    }

    pub fn shifted(mut self, d: f64) -> LinExpr {
        self.c += d;
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Point-wise difference of two coordinate vectors.
pub fn diff(a: &[LinExpr], b: &[LinExpr]) -> Vec<LinExpr> {
    a.iter().zip(b).map(|(x, y)| x.add_scaled(y, -1.0)).collect()
}

/// A single scalar residual.
#[derive(Debug, Clone, PartialEq)]
pub enum RowExpr {
    Affine(LinExpr),
    /// `sign * |diff| + c`.
    Norm {
        diff: Vec<LinExpr>,
        sign: f64,
        c: f64,
    },
}

impl RowExpr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            RowExpr::Affine(e) => e.eval(x),
            RowExpr::Norm { diff, sign, c } => sign * norm(diff, x) + c,
        }
    }

    /// Calls `f(col, value)` for each gradient entry. Coincident points get
    /// a zero gradient.
    pub fn gradient(&self, x: &[f64], mut f: impl FnMut(usize, f64)) {
        match self {
            RowExpr::Affine(e) => {
                for &(j, v) in &e.terms {
                    f(j, v);
                }
            }
            RowExpr::Norm { diff, sign, .. } => {
                let u: Vec<f64> = diff.iter().map(|e| e.eval(x)).collect();
                let r = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r == 0.0 {
                    return;
                }
                for (d, e) in diff.iter().enumerate() {
                    let s = sign * u[d] / r;
                    for &(j, v) in &e.terms {
                        f(j, s * v);
                    }
                }
            }
        }
    }

    /// Adds `weight * Hessian` into `h`.
    pub fn add_hessian(&self, x: &[f64], weight: f64, h: &mut DMatrix<f64>) {
        let RowExpr::Norm { diff, sign, .. } = self else { return };
        let u: Vec<f64> = diff.iter().map(|e| e.eval(x)).collect();
        let r = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let k = diff.len();
        for d in 0..k {
            for e in 0..k {
                let m = (if d == e { 1.0 } else { 0.0 } - u[d] * u[e] / (r * r)) * sign * weight / r;
                if m == 0.0 {
                    continue;
                }
                for &(a, va) in &diff[d].terms {
                    for &(b, vb) in &diff[e].terms {
                        h[(a, b)] += m * va * vb;
                    }
                }
            }
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            RowExpr::Affine(_) => true,
            RowExpr::Norm { sign, .. } => *sign > 0.0,
        }
    }

    pub fn columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = match self {
            RowExpr::Affine(e) => e.terms.iter().map(|t| t.0).collect(),
            RowExpr::Norm { diff, .. } => diff.iter().flat_map(|e| e.terms.iter().map(|t| t.0)).collect(),
        };
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    pub fn shifted(self, d: f64) -> RowExpr {
        match self {
            RowExpr::Affine(e) => RowExpr::Affine(e.shifted(d)),
            RowExpr::Norm { diff, sign, c } => RowExpr::Norm { diff, sign, c: c + d },
        }
    }
}

fn norm(diff: &[LinExpr], x: &[f64]) -> f64 {
    diff.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt()
}
