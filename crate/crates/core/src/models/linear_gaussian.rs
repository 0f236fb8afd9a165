use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::quadrature::{gauss_hermite, normal_nodes};
use super::{ObservationModel, OutcomeSpace};

/// `y = θ·φ(x) + ε`, `ε ~ N(0, σ²)`, with the polynomial feature map
/// `φ(x) = (1, x, …, x^{n-1})`.
#[derive(Clone, Debug)]
pub struct LinearGaussianModel {
    dim: usize,
    noise_sd: f64,
    outcomes: OutcomeSpace,
    rule: (Vec<f64>, Vec<f64>),
}

impl LinearGaussianModel {
    /// Polynomial features of the given degree (dimension `degree + 1`).
    pub fn polynomial(degree: usize, noise_sd: f64) -> Self {
        Self::with_quadrature(degree, noise_sd, 32)
    }

    pub fn with_quadrature(degree: usize, noise_sd: f64, nodes: usize) -> Self {
        assert!(noise_sd > 0.0, "noise sd must be positive");
        LinearGaussianModel {
            dim: degree + 1,
            noise_sd,
            outcomes: OutcomeSpace::Continuous {
                quadrature_nodes: nodes,
            },
            rule: gauss_hermite(nodes),
        }
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn features(&self, x: f64) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| x.powi(i as i32))
    }

    fn mean(&self, theta: &[f64], x: f64) -> f64 {
        let mut xp = 1.0;
        let mut m = 0.0;
        for t in theta {
            m += t * xp;
            xp *= x;
        }
        m
    }
}

impl ObservationModel for LinearGaussianModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn outcome_space(&self) -> &OutcomeSpace {
        &self.outcomes
    }

    fn likelihood(&self, y: f64, theta: &[f64], x: f64) -> f64 {
        self.log_likelihood(y, theta, x).exp()
    }

    fn log_likelihood(&self, y: f64, theta: &[f64], x: f64) -> f64 {
        let r = (y - self.mean(theta, x)) / self.noise_sd;
        -0.5 * r * r - self.noise_sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    fn outcome_nodes(&self, theta: &[f64], x: f64) -> Vec<(f64, f64)> {
        normal_nodes(self.mean(theta, x), self.noise_sd, &self.rule)
    }

    fn predictive_key(&self, theta: &[f64], x: f64) -> Option<f64> {
        Some(self.mean(theta, x))
    }

    fn score(&self, y: f64, theta: &[f64], x: f64) -> DVector<f64> {
        let r = (y - self.mean(theta, x)) / (self.noise_sd * self.noise_sd);
        self.features(x) * r
    }

    fn neg_hessian(&self, _y: f64, _theta: &[f64], x: f64) -> DMatrix<f64> {
        let phi = self.features(x);
        &phi * phi.transpose() / (self.noise_sd * self.noise_sd)
    }

    fn fisher(&self, theta: &[f64], x: f64) -> DMatrix<f64> {
        self.neg_hessian(0.0, theta, x)
    }

    fn conditional_entropy(&self, _theta: &[f64], _x: f64) -> f64 {
        0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + self.noise_sd.ln()
    }

    fn sample(&self, theta: &[f64], x: f64, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean(theta, x) + self.noise_sd * z
    }

    /// Bound on the observed information for placements in `[-1, 1]`.
    fn derivative_bound(&self) -> f64 {
        self.dim as f64 / (self.noise_sd * self.noise_sd)
    }
}
