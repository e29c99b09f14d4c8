use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Cholesky of `m + shift*I`, growing the shift until the factorisation
/// succeeds. Returns the factor and the shift that was used.
pub(crate) fn cholesky_shifted(m: &DMatrix<f64>, min_shift: f64) -> (Cholesky<f64, Dyn>, f64) {
    let n = m.nrows();
    let diag_scale = (0..n).fold(1.0_f64, |s, i| s.max(m[(i, i)].abs()));
    let mut shift = min_shift;
    loop {
        let mut shifted = m.clone();
        if shift > 0.0 {
            for i in 0..n {
                shifted[(i, i)] += shift;
            }
        }
        if let Some(ch) = shifted.cholesky() {
            return (ch, shift);
        }
        shift = if shift == 0.0 { 1e-8 * diag_scale } else { shift * 10.0 };
        assert!(shift.is_finite() && shift < 1e300, "cholesky shift diverged");
    }
}

pub(crate) fn project_box(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((xi, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *xi = xi.max(*l).min(*h);
    }
}

pub(crate) fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
