use nalgebra::{DMatrix, DVector};

use super::{ObservationModel, OutcomeSpace};

/// Noiseless yes/no questions about `Θ ∈ {1, …, 2^m}`.
///
/// A placement encodes a question channel and a threshold: with span
/// `S = 2^m + 1`, placement `x ∈ [c·S, (c+1)·S)` asks "is Θ ≤ x - c·S?"
/// through channel `c`. Channels ask identical questions and differ only in
/// what a cost model charges for them.
#[derive(Clone, Debug)]
pub struct TwentyQuestionsModel {
    bits: u32,
    channels: usize,
    outcomes: OutcomeSpace,
}

impl TwentyQuestionsModel {
    pub fn new(bits: u32, channels: usize) -> Self {
        assert!((1..=30).contains(&bits), "bits out of range");
        assert!(channels >= 1);
        TwentyQuestionsModel {
            bits,
            channels,
            outcomes: OutcomeSpace::Finite(vec![0.0, 1.0]),
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn size(&self) -> usize {
        1usize << self.bits
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn span(&self) -> f64 {
        self.size() as f64 + 1.0
    }

    /// Placement asking "Θ ≤ threshold" through `channel`.
    pub fn placement(&self, channel: usize, threshold: f64) -> f64 {
        channel as f64 * self.span() + threshold
    }

    /// `(channel, threshold)` encoded by a placement.
    pub fn decode(&self, x: f64) -> (usize, f64) {
        let c = ((x / self.span()).floor().max(0.0) as usize).min(self.channels - 1);
        (c, x - c as f64 * self.span())
    }
}

impl ObservationModel for TwentyQuestionsModel {
    fn dim(&self) -> usize {
        1
    }

    fn outcome_space(&self) -> &OutcomeSpace {
        &self.outcomes
    }

    fn likelihood(&self, y: f64, theta: &[f64], x: f64) -> f64 {
        let (_, threshold) = self.decode(x);
        let inside = theta[0] <= threshold;
        if (y == 1.0) == inside {
            1.0
        } else {
            0.0
        }
    }

    fn score(&self, _y: f64, _theta: &[f64], _x: f64) -> DVector<f64> {
        DVector::zeros(1)
    }

    fn neg_hessian(&self, _y: f64, _theta: &[f64], _x: f64) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn fisher(&self, _theta: &[f64], _x: f64) -> DMatrix<f64> {
        DMatrix::zeros(1, 1)
    }

    fn conditional_entropy(&self, _theta: &[f64], _x: f64) -> f64 {
        0.0
    }

    fn derivative_bound(&self) -> f64 {
        0.0
    }
}
