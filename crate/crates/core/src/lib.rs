//! Sequential Bayesian adaptive estimation on a parameter grid.
//!
//! A [`GridPosterior`] is updated trial by trial; a [`Strategy`] picks each
//! placement by expected information gain (optionally per unit expected
//! cost); [`doptimal`] computes the design the greedy rule converges to, and
//! [`diagnostics`] measures how close a simulated run gets to it.

// `!(v > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod doptimal;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod posterior;
pub mod strategies;
pub mod verify;

pub use diagnostics::{
    AsymptoticReport, Clock, MostTrials, MostTrialsParams, TraceRow, TrialRecord, TrialTrace,
};
pub use doptimal::{solve_doptimal, CandidateInformationSet, DesignWeights, Normalization};
pub use error::{Error, Result};
pub use harness::{
    run_experiment, run_sweep, ExperimentConfig, RunResult, RunSummary, SweepPlan, SweepResult,
};
pub use models::{
    CostModel, LinearGaussianModel, ObservationModel, OutcomeSpace, PsychometricModel, TableModel,
    TwentyQuestionsModel,
};
pub use posterior::{Axis, GridPosterior, ParameterGrid, PosteriorSummary};
pub use strategies::{CandidateSet, PlacementDecision, Strategy, StrategyKind};
pub use verify::{run_verification, VerificationReport};
