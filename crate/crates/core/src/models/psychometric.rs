use nalgebra::{DMatrix, DVector};

use super::{ObservationModel, OutcomeSpace};

/// Logistic sigmoid `1 / (1 + e^{-u})`.
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Fisher information of the logistic detection model,
/// `e^{θ-x} / (1 + e^{θ-x})²`.
pub fn fisher_psychometric(theta: f64, x: f64) -> f64 {
    // ψ(-u) rather than 1 - ψ(u) keeps the far tails from rounding to zero
    let u = theta - x;
    logistic(u) * logistic(-u)
}

/// Binary detection model with `p(1 | θ, x) = ψ(θ - x)`, ψ the logistic
/// sigmoid. Thresholds and stimulus intensities live on `[lower, upper]`.
#[derive(Clone, Debug)]
pub struct PsychometricModel {
    pub lower: f64,
    pub upper: f64,
    outcomes: OutcomeSpace,
}

impl PsychometricModel {
    pub fn new(lower: f64, upper: f64) -> Self {
        PsychometricModel {
            lower,
            upper,
            outcomes: OutcomeSpace::Finite(vec![0.0, 1.0]),
        }
    }
}

impl Default for PsychometricModel {
    fn default() -> Self {
        Self::new(0.0, 100.0)
    }
}

impl ObservationModel for PsychometricModel {
    fn dim(&self) -> usize {
        1
    }

    fn outcome_space(&self) -> &OutcomeSpace {
        &self.outcomes
    }

    fn likelihood(&self, y: f64, theta: &[f64], x: f64) -> f64 {
        let u = theta[0] - x;
        if y == 1.0 {
            logistic(u)
        } else {
            logistic(-u)
        }
    }

    fn log_likelihood(&self, y: f64, theta: &[f64], x: f64) -> f64 {
        let u = theta[0] - x;
        if y == 1.0 {
            -softplus(-u)
        } else {
            -softplus(u)
        }
    }

    fn outcome_probabilities(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        let u = theta[0] - x;
        out[0] = logistic(-u);
        out[1] = logistic(u);
    }

    fn score(&self, y: f64, theta: &[f64], x: f64) -> DVector<f64> {
        let u = theta[0] - x;
        DVector::from_element(1, if y == 1.0 { logistic(-u) } else { -logistic(u) })
    }

    /// Outcome-free for the logistic link: `ψ'(θ - x)`.
    fn neg_hessian(&self, _y: f64, theta: &[f64], x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, fisher_psychometric(theta[0], x))
    }

    fn fisher(&self, theta: &[f64], x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, fisher_psychometric(theta[0], x))
    }

    fn conditional_entropy(&self, theta: &[f64], x: f64) -> f64 {
        let u = theta[0] - x;
        // h(ψ(u)) = softplus(u) - u·ψ(u)
        softplus(u) - u * logistic(u)
    }

    fn derivative_bound(&self) -> f64 {
        1.0
    }
}
