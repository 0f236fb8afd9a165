//! Gauss–Hermite quadrature by the Golub–Welsch eigenvalue method.

use nalgebra::DMatrix;

/// Nodes and weights for `∫ e^{-z²} f(z) dz ≈ Σ w_k f(z_k)`, nodes ascending.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Nodes and probability weights for `E[f(Y)]`, `Y ~ N(mean, sd²)`.
pub fn normal_nodes(mean: f64, sd: f64, rule: &(Vec<f64>, Vec<f64>)) -> Vec<(f64, f64)> {
    let scale = std::f64::consts::SQRT_2 * sd;
    let norm = std::f64::consts::PI.sqrt();
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(z, w)| (mean + scale * z, w / norm))
        .collect()
}
