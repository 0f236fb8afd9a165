//! Observation and cost models.
//!
//! Placements and outcomes are real scalars throughout; parameters are
//! n-vectors. A model either has a finite outcome set (enumerated exactly in
//! every outcome sum) or continuous outcomes integrated by Gauss–Hermite
//! quadrature.

mod cost;
mod linear_gaussian;
mod psychometric;
pub mod quadrature;
mod table;
mod twenty_questions;

pub use cost::{expected_cost_at, CostKind, CostModel};
pub use linear_gaussian::LinearGaussianModel;
pub use psychometric::{fisher_psychometric, logistic, PsychometricModel};
pub use table::TableModel;
pub use twenty_questions::TwentyQuestionsModel;

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::error::{Error, Result};

/// Central-difference step used when a model has no analytic derivatives.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum OutcomeSpace {
    /// Enumerated outcome values; probabilities are reported in this order.
    Finite(Vec<f64>),
    /// Real-valued outcomes; sums over `y` use a Gauss–Hermite rule with this
    /// many nodes centered on the conditional mean.
    Continuous { quadrature_nodes: usize },
}

impl OutcomeSpace {
    pub fn finite_len(&self) -> Option<usize> {
        match self {
            OutcomeSpace::Finite(v) => Some(v.len()),
            OutcomeSpace::Continuous { .. } => None,
        }
    }
}

/// Likelihood family `p(y | θ, x)` with derivatives and Fisher information.
pub trait ObservationModel: Send + Sync + Debug {
    /// Parameter dimension n.
    fn dim(&self) -> usize;

    fn outcome_space(&self) -> &OutcomeSpace;

    /// Probability mass (finite outcomes) or density (continuous outcomes).
    fn likelihood(&self, y: f64, theta: &[f64], x: f64) -> f64;

    fn log_likelihood(&self, y: f64, theta: &[f64], x: f64) -> f64 {
        self.likelihood(y, theta, x).ln()
    }

    /// Fills `out` with `p(y_k | θ, x)` for each enumerated outcome `y_k`.
    /// Only meaningful for finite outcome spaces.
    fn outcome_probabilities(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        if let OutcomeSpace::Finite(ys) = self.outcome_space() {
            for (o, &y) in out.iter_mut().zip(ys) {
                *o = self.likelihood(y, theta, x);
            }
        }
    }

    /// Outcome nodes `(y, weight)` such that `Σ weight·f(y) ≈ E[f(Y) | θ, x]`.
    /// For finite outcomes these are the outcomes with their probabilities.
    fn outcome_nodes(&self, theta: &[f64], x: f64) -> Vec<(f64, f64)> {
        match self.outcome_space() {
            OutcomeSpace::Finite(ys) => {
                let mut p = vec![0.0; ys.len()];
                self.outcome_probabilities(theta, x, &mut p);
                ys.iter().cloned().zip(p).collect()
            }
            OutcomeSpace::Continuous { .. } => {
                unimplemented!("continuous-outcome models must provide outcome_nodes")
            }
        }
    }

    /// A scalar that fixes `p(· | θ, x)` entirely, if the model has one (the
    /// mean of a fixed-variance Gaussian, say). Continuous-outcome gain sums
    /// merge cells whose keys agree.
    fn predictive_key(&self, _theta: &[f64], _x: f64) -> Option<f64> {
        None
    }

    /// `∇_θ log p(y | θ, x)`.
    fn score(&self, y: f64, theta: &[f64], x: f64) -> DVector<f64> {
        numeric_score(self, y, theta, x, DEFAULT_FD_STEP)
    }

    /// `-∇²_θ log p(y | θ, x)`.
    fn neg_hessian(&self, y: f64, theta: &[f64], x: f64) -> DMatrix<f64> {
        numeric_neg_hessian(self, y, theta, x, DEFAULT_FD_STEP)
    }

    /// Fisher information `I_x(θ) = E[s sᵀ]`.
    fn fisher(&self, theta: &[f64], x: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut acc = DMatrix::zeros(n, n);
        for (y, w) in self.outcome_nodes(theta, x) {
            if w > 0.0 {
                let s = self.score(y, theta, x);
                acc += w * &s * s.transpose();
            }
        }
        acc
    }

    /// Entropy of `Y_x` given θ, in nats.
    fn conditional_entropy(&self, theta: &[f64], x: f64) -> f64 {
        self.outcome_nodes(theta, x)
            .into_iter()
            .filter(|&(_, w)| w > 0.0)
            .map(|(y, w)| match self.outcome_space() {
                OutcomeSpace::Finite(_) => -w * w.ln(),
                OutcomeSpace::Continuous { .. } => -w * self.log_likelihood(y, theta, x),
            })
            .sum()
    }

    /// Draws an outcome. Finite outcomes use the inverse CDF of one uniform
    /// draw so sequences are reproducible for a given generator.
    fn sample(&self, theta: &[f64], x: f64, rng: &mut dyn RngCore) -> f64 {
        match self.outcome_space() {
            OutcomeSpace::Finite(ys) => {
                let mut p = vec![0.0; ys.len()];
                self.outcome_probabilities(theta, x, &mut p);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, &pk) in p.iter().enumerate() {
                    acc += pk;
                    if u < acc {
                        return ys[k];
                    }
                }
                // u landed in the rounding slack above Σp
                ys[p.iter().rposition(|&pk| pk > 0.0).unwrap_or(ys.len() - 1)]
            }
            OutcomeSpace::Continuous { .. } => {
                unimplemented!("continuous-outcome models must provide sample")
            }
        }
    }

    /// Declared bound M on the magnitudes of score and observed information.
    fn derivative_bound(&self) -> f64;
}

/// Central-difference score.
pub fn numeric_score<M: ObservationModel + ?Sized>(
    model: &M,
    y: f64,
    theta: &[f64],
    x: f64,
    step: f64,
) -> DVector<f64> {
    let n = theta.len();
    let mut t = theta.to_vec();
    DVector::from_fn(n, |i, _| {
        t[i] = theta[i] + step;
        let up = model.log_likelihood(y, &t, x);
        t[i] = theta[i] - step;
        let dn = model.log_likelihood(y, &t, x);
        t[i] = theta[i];
        (up - dn) / (2.0 * step)
    })
}

/// Central-difference negative Hessian of the log-likelihood.
pub fn numeric_neg_hessian<M: ObservationModel + ?Sized>(
    model: &M,
    y: f64,
    theta: &[f64],
    x: f64,
    step: f64,
) -> DMatrix<f64> {
    let n = theta.len();
    let f = |t: &[f64]| model.log_likelihood(y, t, x);
    let mut t = theta.to_vec();
    let f0 = f(&t);
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        t[i] = theta[i] + step;
        let up = f(&t);
        t[i] = theta[i] - step;
        let dn = f(&t);
        t[i] = theta[i];
        h[(i, i)] = -(up - 2.0 * f0 + dn) / (step * step);
        for j in (i + 1)..n {
            let mut corner = |si: f64, sj: f64| {
                t[i] = theta[i] + si * step;
                t[j] = theta[j] + sj * step;
                let v = f(&t);
                t[i] = theta[i];
                t[j] = theta[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * step * step);
            h[(i, j)] = -v;
            h[(j, i)] = -v;
        }
    }
    h
}

/// Fisher information from central-difference scores: `Σ_y p(y)·s(y)s(y)ᵀ`,
/// exact over outcomes for finite outcome sets.
pub fn fisher_numeric(
    model: &dyn ObservationModel,
    theta: &[f64],
    x: f64,
    step: f64,
) -> Result<DMatrix<f64>> {
    if !(step > 0.0) {
        return Err(Error::parameter(
            "step",
            "finite-difference step must be positive",
        ));
    }
    let n = model.dim();
    let mut acc = DMatrix::zeros(n, n);
    for (y, w) in model.outcome_nodes(theta, x) {
        if w > 0.0 {
            let s = numeric_score(model, y, theta, x, step);
            acc += w * &s * s.transpose();
        }
    }
    Ok(acc)
}

/// `Σ_y p(y | θ, x)·(-∇² log p(y | θ, x))`; equals the Fisher information
/// under the usual regularity conditions.
pub fn expected_observed_information(
    model: &dyn ObservationModel,
    theta: &[f64],
    x: f64,
) -> DMatrix<f64> {
    let n = model.dim();
    let mut acc = DMatrix::zeros(n, n);
    for (y, w) in model.outcome_nodes(theta, x) {
        if w > 0.0 {
            acc += w * model.neg_hessian(y, theta, x);
        }
    }
    acc
}

/// Draws `Y_x` at the true parameter.
pub fn sample_outcome(
    model: &dyn ObservationModel,
    theta: &[f64],
    x: f64,
    rng: &mut dyn RngCore,
) -> f64 {
    model.sample(theta, x, rng)
}
