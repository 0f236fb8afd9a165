//! Grid representation of the posterior over a compact parameter box.
//!
//! Cell masses are stored in log-space and renormalized after every update by
//! subtracting the running maximum before exponentiation. Linear weights are
//! cached alongside, together with the list of "active" cells whose mass is
//! within `ACTIVE_LOG_CUTOFF` of the largest cell. Sums that feed placement
//! decisions run over the active cells only; everything else (normalization,
//! entropy, moments) uses every cell with nonzero mass.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ObservationModel, OutcomeSpace};

/// Cells whose log-mass falls more than this below the maximum cell are left
/// out of placement sums. `e^-60 ≈ 1e-26` is far below f64 resolution relative
/// to the dominant cell.
pub const ACTIVE_LOG_CUTOFF: f64 = 60.0;

/// One axis of the parameter box, split into `count` cells of equal width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, count: usize) -> Self {
        Axis {
            lower,
            upper,
            count,
        }
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / self.count as f64
    }

    /// Cell center of index `k`.
    pub fn center(&self, k: usize) -> f64 {
        self.lower + (k as f64 + 0.5) * self.spacing()
    }
}

/// Cartesian grid of cell centers. Points are stored row-major with the last
/// axis varying fastest.
#[derive(Clone, Debug)]
pub struct ParameterGrid {
    axes: Vec<Axis>,
    points: Vec<f64>,
    cell_volume: f64,
}

impl ParameterGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::parameter("axes", "grid needs at least one axis"));
        }
        for a in &axes {
            if !(a.lower.is_finite() && a.upper.is_finite() && a.upper > a.lower) {
                return Err(Error::parameter(
                    "bounds",
                    format!("axis [{}, {}] has no positive length", a.lower, a.upper),
                ));
            }
            if a.count == 0 {
                return Err(Error::parameter("count", "axis needs at least one cell"));
            }
        }
        let dim = axes.len();
        let len: usize = axes.iter().map(|a| a.count).product();
        let mut points = Vec::with_capacity(len * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..len {
            for (d, a) in axes.iter().enumerate() {
                points.push(a.center(idx[d]));
            }
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < axes[d].count {
                    break;
                }
                idx[d] = 0;
            }
        }
        let cell_volume = axes.iter().map(Axis::spacing).product();
        Ok(ParameterGrid {
            axes,
            points,
            cell_volume,
        })
    }

    /// One-dimensional grid of `count` cells on `[lower, upper]`.
    pub fn uniform(lower: f64, upper: f64, count: usize) -> Result<Self> {
        Self::new(vec![Axis::new(lower, upper, count)])
    }

    /// Unit cells centered on the integers `1..=count`.
    pub fn integers(count: usize) -> Result<Self> {
        Self::new(vec![Axis::new(0.5, count as f64 + 0.5, count)])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.points[i * d..(i + 1) * d]
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn lower(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.lower).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.upper).collect()
    }

    /// Lebesgue volume of the bounding box.
    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.upper - a.lower).product()
    }

    /// Euclidean diameter of the bounding box.
    pub fn diameter(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| (a.upper - a.lower).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && self
                .axes
                .iter()
                .zip(theta)
                .all(|(a, &t)| t >= a.lower && t <= a.upper)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub entropy_nats: f64,
    pub mode: Vec<f64>,
}

impl PosteriorSummary {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.mean.len();
        DMatrix::from_fn(n, n, |i, j| self.covariance[i][j])
    }
}

/// Summary of the posterior restricted to a ball, plus the ball's mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSummary {
    pub summary: PosteriorSummary,
    pub mass: f64,
}

#[derive(Clone, Debug)]
pub struct GridPosterior {
    grid: Arc<ParameterGrid>,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
    active: Vec<usize>,
}

impl GridPosterior {
    pub fn uniform(grid: Arc<ParameterGrid>) -> Self {
        let lw = vec![0.0; grid.len()];
        Self::from_log_weights(grid, lw).expect("uniform weights are always normalizable")
    }

    /// Builds a posterior from unnormalized log cell masses.
    pub fn from_log_weights(grid: Arc<ParameterGrid>, log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.len() != grid.len() {
            return Err(Error::parameter(
                "log_weights",
                format!("expected {} entries, got {}", grid.len(), log_weights.len()),
            ));
        }
        if log_weights
            .iter()
            .any(|w| w.is_nan() || *w == f64::INFINITY)
        {
            return Err(Error::parameter("log_weights", "NaN or +inf entry"));
        }
        let mut post = GridPosterior {
            grid,
            log_weights,
            weights: Vec::new(),
            active: Vec::new(),
        };
        if !post.normalize() {
            return Err(Error::parameter("log_weights", "all cells have zero mass"));
        }
        Ok(post)
    }

    /// Prior with cell masses proportional to `exp(log_density(θ))` at the
    /// cell centers.
    pub fn from_log_density(
        grid: Arc<ParameterGrid>,
        log_density: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let lw = (0..grid.len())
            .map(|i| log_density(grid.point(i)))
            .collect();
        Self::from_log_weights(grid, lw)
    }

    pub fn grid(&self) -> &Arc<ParameterGrid> {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Normalized linear cell masses.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Indices of cells within `ACTIVE_LOG_CUTOFF` of the heaviest cell.
    pub fn active_cells(&self) -> &[usize] {
        &self.active
    }

    /// Returns false if every cell has zero mass.
    fn normalize(&mut self) -> bool {
        let max = self
            .log_weights
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return false;
        }
        let mut sum = 0.0;
        for &lw in &self.log_weights {
            let d = lw - max;
            if d > -745.0 {
                sum += d.exp();
            }
        }
        let lse = max + sum.ln();
        self.weights.clear();
        self.weights.reserve(self.log_weights.len());
        self.active.clear();
        let cutoff = max - lse - ACTIVE_LOG_CUTOFF;
        for (i, lw) in self.log_weights.iter_mut().enumerate() {
            *lw -= lse;
            self.weights.push(if *lw > -745.0 { lw.exp() } else { 0.0 });
            if *lw >= cutoff {
                self.active.push(i);
            }
        }
        true
    }

    /// Conditions on outcome `y` at placement `x`, returning the new posterior.
    pub fn bayes_update(&self, model: &dyn ObservationModel, x: f64, y: f64) -> Result<Self> {
        let mut next = self.clone();
        next.update_in_place(model, x, y)?;
        Ok(next)
    }

    /// In-place variant of [`bayes_update`](Self::bayes_update). On error the
    /// posterior is left unchanged.
    pub fn update_in_place(&mut self, model: &dyn ObservationModel, x: f64, y: f64) -> Result<()> {
        let grid = Arc::clone(&self.grid);
        self.apply(x, y, |i| model.log_likelihood(y, grid.point(i), x))
    }

    /// Update with precomputed per-cell log-likelihoods of the observed outcome.
    pub fn update_with_log_likelihoods(&mut self, x: f64, y: f64, loglik: &[f64]) -> Result<()> {
        debug_assert_eq!(loglik.len(), self.log_weights.len());
        self.apply(x, y, |i| loglik[i])
    }

    fn apply(&mut self, x: f64, y: f64, loglik: impl Fn(usize) -> f64) -> Result<()> {
        let saved = self.log_weights.clone();
        for (i, lw) in self.log_weights.iter_mut().enumerate() {
            if *lw == f64::NEG_INFINITY {
                continue;
            }
            let ll = loglik(i);
            if ll.is_nan() {
                self.log_weights = saved;
                return Err(Error::ModelViolation(format!(
                    "NaN log-likelihood for y={y} at x={x}"
                )));
            }
            *lw += ll;
        }
        if !self.normalize() {
            self.log_weights = saved;
            self.normalize();
            return Err(Error::ImpossibleObservation { x, y });
        }
        Ok(())
    }

    /// Riemann approximation of the differential entropy (nats) with respect
    /// to Lebesgue measure on the parameter box.
    pub fn differential_entropy(&self) -> f64 {
        // compensated: many near-equal terms otherwise lose ~n·ε
        let (mut h, mut comp) = (0.0f64, 0.0f64);
        for (&w, &lw) in self.weights.iter().zip(&self.log_weights) {
            if w > 0.0 {
                let term = -w * lw;
                let t = h + term;
                comp += if h.abs() >= term.abs() {
                    (h - t) + term
                } else {
                    (term - t) + h
                };
                h = t;
            }
        }
        h + comp + self.grid.cell_volume().ln()
    }

    /// `KL(self ‖ reference)` over cell masses.
    pub fn kl_divergence(&self, reference: &GridPosterior) -> f64 {
        self.weights
            .iter()
            .zip(&self.log_weights)
            .zip(&reference.log_weights)
            .filter(|((w, _), _)| **w > 0.0)
            .map(|((w, lw), lr)| w * (lw - lr))
            .sum()
    }

    pub fn summarize(&self) -> PosteriorSummary {
        self.summary_of(|_| true).0
    }

    /// Summary conditioned on the Euclidean ball `B(center, radius)`.
    pub fn local_summary(&self, center: &[f64], radius: f64) -> Result<LocalSummary> {
        if !(radius > 0.0) {
            return Err(Error::parameter("radius", "must be positive"));
        }
        if center.len() != self.dim() {
            return Err(Error::parameter("center", "dimension mismatch"));
        }
        let r2 = radius * radius;
        let grid = Arc::clone(&self.grid);
        let (summary, mass) = self.summary_of(|i| {
            grid.point(i)
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                <= r2
        });
        if !(mass > 0.0) {
            return Err(Error::EmptyWindow {
                center: center.to_vec(),
                radius,
            });
        }
        Ok(LocalSummary { summary, mass })
    }

    fn summary_of(&self, include: impl Fn(usize) -> bool) -> (PosteriorSummary, f64) {
        let n = self.dim();
        let mut mass = 0.0;
        let mut mean = DVector::zeros(n);
        let mut mode = None::<(usize, f64)>;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > 0.0 && include(i) {
                mass += w;
                for (d, &p) in self.grid.point(i).iter().enumerate() {
                    mean[d] += w * p;
                }
                if mode.is_none_or(|(_, best)| w > best) {
                    mode = Some((i, w));
                }
            }
        }
        if !(mass > 0.0) {
            let empty = PosteriorSummary {
                mean: vec![f64::NAN; n],
                covariance: vec![vec![f64::NAN; n]; n],
                entropy_nats: f64::NAN,
                mode: vec![f64::NAN; n],
            };
            return (empty, 0.0);
        }
        mean /= mass;
        let mut cov = DMatrix::zeros(n, n);
        let mut h = 0.0;
        let log_mass = mass.ln();
        for (i, &w) in self.weights.iter().enumerate() {
            if w > 0.0 && include(i) {
                let p = self.grid.point(i);
                for a in 0..n {
                    let da = p[a] - mean[a];
                    for b in a..n {
                        cov[(a, b)] += w * da * (p[b] - mean[b]);
                    }
                }
                let q = w / mass;
                h -= q * (self.log_weights[i] - log_mass);
            }
        }
        for a in 0..n {
            for b in a..n {
                let v = cov[(a, b)] / mass;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let summary = PosteriorSummary {
            mean: mean.iter().cloned().collect(),
            covariance: (0..n)
                .map(|a| (0..n).map(|b| cov[(a, b)]).collect())
                .collect(),
            entropy_nats: h + self.grid.cell_volume().ln(),
            mode: self.grid.point(mode.expect("mass > 0").0).to_vec(),
        };
        (summary, mass)
    }

    /// Posterior predictive probabilities over a finite outcome set, in the
    /// order of the model's outcome list.
    pub fn predictive(&self, model: &dyn ObservationModel, x: f64) -> Result<Vec<f64>> {
        let outcomes = match model.outcome_space() {
            OutcomeSpace::Finite(v) => v.len(),
            OutcomeSpace::Continuous { .. } => {
                return Err(Error::parameter(
                    "model",
                    "predictive probabilities need a finite outcome set",
                ))
            }
        };
        let mut pred = vec![0.0; outcomes];
        let mut buf = vec![0.0; outcomes];
        for (i, &w) in self.weights.iter().enumerate() {
            if w > 0.0 {
                model.outcome_probabilities(self.grid.point(i), x, &mut buf);
                for (p, b) in pred.iter_mut().zip(&buf) {
                    *p += w * b;
                }
            }
        }
        Ok(pred)
    }
}
