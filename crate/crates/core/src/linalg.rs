//! Small dense helpers for the n×n information matrices used throughout.

use nalgebra::DMatrix;

/// `log det` of a symmetric matrix via Cholesky; `-inf` when the matrix is
/// not numerically positive definite.
pub fn log_det_spd(m: &DMatrix<f64>) -> f64 {
    match cholesky(m) {
        Some(ch) => 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => f64::NEG_INFINITY,
    }
}

/// Inverse of a symmetric positive definite matrix, `None` if Cholesky fails.
pub fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    cholesky(m).map(|ch| ch.inverse())
}

/// Cholesky factor, rejecting pivots that are rounding noise relative to the
/// largest diagonal entry.
fn cholesky(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let scale = m.diagonal().iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let ch = m.clone().cholesky()?;
    let floor = 1e-12 * scale;
    ch.l_dirty()
        .diagonal()
        .iter()
        .all(|d| d * d > floor)
        .then_some(ch)
}

/// Frobenius product `tr(Aᵀ B)`.
pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let asym = (m - m.transpose()).amax();
    asym <= tol && min_eigenvalue(m) >= -tol
}
