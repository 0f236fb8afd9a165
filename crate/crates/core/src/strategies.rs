//! Placement rules and the expected-gain / expected-cost evaluators they share.

use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frobenius;
use crate::models::{CostModel, ObservationModel, OutcomeSpace};
use crate::posterior::{GridPosterior, ParameterGrid};

/// Per-(candidate, cell) likelihood values for a finite-outcome model,
/// precomputed once and shared by every replicate that uses the same grid.
#[derive(Debug)]
pub struct LikelihoodTable {
    grid: Arc<ParameterGrid>,
    cells: usize,
    outcomes: usize,
    /// `[candidate][cell][outcome]`
    probs: Vec<f64>,
    /// `[candidate][outcome][cell]`, contiguous rows for Bayes updates
    log_probs: Vec<f64>,
    /// `[candidate][cell]`, `Σ_y p log p`
    neg_entropy: Vec<f64>,
}

impl LikelihoodTable {
    fn build(
        model: &dyn ObservationModel,
        grid: Arc<ParameterGrid>,
        points: &[f64],
    ) -> Option<Self> {
        let outcomes = match model.outcome_space() {
            OutcomeSpace::Finite(v) => v.clone(),
            OutcomeSpace::Continuous { .. } => return None,
        };
        let k = outcomes.len();
        let cells = grid.len();
        let mut probs = Vec::with_capacity(points.len() * cells * k);
        let mut log_probs = vec![0.0; points.len() * cells * k];
        let mut neg_entropy = Vec::with_capacity(points.len() * cells);
        let mut buf = vec![0.0; k];
        for (j, &x) in points.iter().enumerate() {
            for i in 0..cells {
                let theta = grid.point(i);
                model.outcome_probabilities(theta, x, &mut buf);
                probs.extend_from_slice(&buf);
                neg_entropy.push(-model.conditional_entropy(theta, x));
                for (o, &y) in outcomes.iter().enumerate() {
                    log_probs[(j * k + o) * cells + i] = model.log_likelihood(y, theta, x);
                }
            }
        }
        Some(LikelihoodTable {
            grid,
            cells,
            outcomes: k,
            probs,
            log_probs,
            neg_entropy,
        })
    }

    fn matches(&self, grid: &Arc<ParameterGrid>) -> bool {
        Arc::ptr_eq(&self.grid, grid)
    }

    /// Log-likelihood of outcome index `k` at candidate `j`, per grid cell.
    pub fn log_likelihood_row(&self, j: usize, k: usize) -> &[f64] {
        let start = (j * self.outcomes + k) * self.cells;
        &self.log_probs[start..start + self.cells]
    }
}

/// Sorted, deduplicated candidate placements; optionally tabulated against a
/// grid for fast gain evaluation.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    points: Vec<f64>,
    table: Option<Arc<LikelihoodTable>>,
}

impl CandidateSet {
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::parameter("candidates", "candidate set is empty"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::parameter("candidates", "non-finite placement"));
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        Ok(CandidateSet {
            points,
            table: None,
        })
    }

    /// `count` evenly spaced placements spanning `[lower, upper]` inclusive.
    pub fn linspace(lower: f64, upper: f64, count: usize) -> Result<Self> {
        if count == 0 || !(upper >= lower) {
            return Err(Error::parameter(
                "candidates",
                "need count ≥ 1 and upper ≥ lower",
            ));
        }
        if count == 1 {
            return Self::new(vec![0.5 * (lower + upper)]);
        }
        let h = (upper - lower) / (count - 1) as f64;
        Self::new((0..count).map(|j| lower + j as f64 * h).collect())
    }

    /// Attaches a likelihood table for `grid`. Continuous-outcome models are
    /// left untabulated.
    pub fn tabulated(mut self, model: &dyn ObservationModel, grid: Arc<ParameterGrid>) -> Self {
        self.table = LikelihoodTable::build(model, grid, &self.points).map(Arc::new);
        self
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn table(&self) -> Option<&Arc<LikelihoodTable>> {
        self.table.as_ref()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateScore {
    pub gain: f64,
    pub expected_cost: f64,
}

/// Mutual information `I_t(Θ; Y_x)` in nats, computed as the predictive
/// entropy minus the average conditional entropy.
pub fn expected_information_gain(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    x: f64,
) -> f64 {
    score_direct(post, model, &CostModel::unit(), x).gain
}

/// Mutual information in the KL-average form
/// `Σ_y p_t(y)·KL(p_t(θ | y) ‖ p_t(θ))`, summed over every cell with mass.
pub fn expected_information_gain_kl(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    x: f64,
) -> f64 {
    let grid = post.grid();
    let cells: Vec<usize> = (0..grid.len())
        .filter(|&i| post.weights()[i] > 0.0)
        .collect();
    let w = post.weights();
    match model.outcome_space() {
        OutcomeSpace::Finite(ys) => {
            let mut total = 0.0;
            for &y in ys {
                let lik: Vec<f64> = cells
                    .iter()
                    .map(|&i| model.likelihood(y, grid.point(i), x))
                    .collect();
                let py: f64 = cells.iter().zip(&lik).map(|(&i, l)| w[i] * l).sum();
                if py <= 0.0 {
                    continue;
                }
                // KL(p(θ|y) ‖ p(θ)) = Σ_i p(θ_i|y) log(p(y|θ_i)/p(y))
                let kl: f64 = cells
                    .iter()
                    .zip(&lik)
                    .filter(|(_, &l)| l > 0.0)
                    .map(|(&i, &l)| (w[i] * l / py) * (l / py).ln())
                    .sum();
                total += py * kl;
            }
            total
        }
        OutcomeSpace::Continuous { .. } => {
            // E_θ E_{y|θ} log(p(y|θ)/p(y)), outcome integral by quadrature.
            let mut total = 0.0;
            for &i in &cells {
                let th = grid.point(i);
                for (y, gw) in model.outcome_nodes(th, x) {
                    let own = model.log_likelihood(y, th, x);
                    let mix = log_mixture_density(post, model, &cells, y, x);
                    total += w[i] * gw * (own - mix);
                }
            }
            total
        }
    }
}

fn log_mixture_density(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    cells: &[usize],
    y: f64,
    x: f64,
) -> f64 {
    let grid = post.grid();
    let w = post.weights();
    let lls: Vec<f64> = cells
        .iter()
        .map(|&j| w[j].ln() + model.log_likelihood(y, grid.point(j), x))
        .collect();
    let max = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + lls.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// `(representative cell, weight)` pairs for the predictive mixture at `x`,
/// with cells of equal predictive key merged.
fn merged_components(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    cells: &[usize],
    x: f64,
) -> Vec<(usize, f64)> {
    let grid = post.grid();
    let w = post.weights();
    let keys: Option<Vec<(f64, usize)>> = cells
        .iter()
        .map(|&i| model.predictive_key(grid.point(i), x).map(|k| (k, i)))
        .collect();
    let Some(mut keys) = keys else {
        return cells.iter().map(|&i| (i, w[i])).collect();
    };
    keys.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(usize, f64)> = Vec::new();
    let mut last = f64::NAN;
    for (k, i) in keys {
        // keys differing only by summation rounding are the same component
        if (k - last).abs() <= 1e-12 * k.abs().max(1.0) {
            out.last_mut().unwrap().1 += w[i];
        } else {
            out.push((i, w[i]));
            last = k;
        }
    }
    out
}

fn log_component_mixture(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    comps: &[(usize, f64)],
    y: f64,
    x: f64,
) -> f64 {
    let grid = post.grid();
    let lls: Vec<f64> = comps
        .iter()
        .map(|&(j, wj)| wj.ln() + model.log_likelihood(y, grid.point(j), x))
        .collect();
    let max = lls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + lls.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

fn binary_or_finite_entropy(pred: &[f64]) -> f64 {
    pred.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

fn score_direct(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    cost: &CostModel,
    x: f64,
) -> CandidateScore {
    let grid = post.grid();
    let w = post.weights();
    let active = post.active_cells();
    match model.outcome_space() {
        OutcomeSpace::Finite(ys) => {
            let mut pred = vec![0.0; ys.len()];
            let mut buf = vec![0.0; ys.len()];
            let mut cond = 0.0;
            for &i in active {
                let th = grid.point(i);
                model.outcome_probabilities(th, x, &mut buf);
                for (p, b) in pred.iter_mut().zip(&buf) {
                    *p += w[i] * b;
                }
                cond += w[i] * model.conditional_entropy(th, x);
            }
            let gain = binary_or_finite_entropy(&pred) - cond;
            let expected_cost = cost.expected_over(ys.iter().cloned().zip(pred), x);
            CandidateScore {
                gain,
                expected_cost,
            }
        }
        OutcomeSpace::Continuous { .. } => {
            let cond: f64 = active
                .iter()
                .map(|&i| w[i] * model.conditional_entropy(grid.point(i), x))
                .sum();
            let comps = merged_components(post, model, active, x);
            let mut h_y = 0.0;
            let mut expected_cost = 0.0;
            for &(rep, wg) in &comps {
                for (y, gw) in model.outcome_nodes(grid.point(rep), x) {
                    h_y -= wg * gw * log_component_mixture(post, model, &comps, y, x);
                    expected_cost += wg * gw * cost.conditional_mean(y, x);
                }
            }
            CandidateScore {
                gain: h_y - cond,
                expected_cost,
            }
        }
    }
}

fn score_tabulated(
    post: &GridPosterior,
    table: &LikelihoodTable,
    cost: &CostModel,
    outcomes: &[f64],
    j: usize,
    x: f64,
    pred: &mut [f64],
) -> CandidateScore {
    let k = table.outcomes;
    let w = post.weights();
    let probs = &table.probs[j * table.cells * k..(j + 1) * table.cells * k];
    let negent = &table.neg_entropy[j * table.cells..(j + 1) * table.cells];
    pred.iter_mut().for_each(|p| *p = 0.0);
    let mut cond = 0.0;
    for &i in post.active_cells() {
        let wi = w[i];
        let row = &probs[i * k..(i + 1) * k];
        for (p, r) in pred.iter_mut().zip(row) {
            *p += wi * r;
        }
        cond += wi * negent[i];
    }
    CandidateScore {
        gain: binary_or_finite_entropy(pred) + cond,
        expected_cost: cost.expected_over(outcomes.iter().cloned().zip(pred.iter().cloned()), x),
    }
}

/// Expected gain and posterior-predictive expected cost `E_t(C_x)` for every
/// candidate, in candidate order.
pub fn score_candidates(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    cost: &CostModel,
    candidates: &CandidateSet,
) -> Vec<CandidateScore> {
    match (candidates.table(), model.outcome_space()) {
        (Some(table), OutcomeSpace::Finite(ys)) if table.matches(post.grid()) => {
            let mut pred = vec![0.0; ys.len()];
            candidates
                .points()
                .iter()
                .enumerate()
                .map(|(j, &x)| score_tabulated(post, table, cost, ys, j, x, &mut pred))
                .collect()
        }
        _ => candidates
            .points()
            .iter()
            .map(|&x| score_direct(post, model, cost, x))
            .collect(),
    }
}

/// Local quadratic approximation `½ Σ_t ⊙ I_x(Θ̂_t)` of the expected gain.
pub fn quadratic_gain_approximation(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    x: f64,
) -> f64 {
    let s = post.summarize();
    0.5 * frobenius(&s.covariance_matrix(), &model.fisher(&s.mean, x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementDecision {
    pub x: f64,
    /// Index into the candidate set when the placement is a candidate.
    pub candidate_index: Option<usize>,
    pub expected_gain_nats: f64,
    pub expected_cost: f64,
    pub objective: f64,
    pub sup_objective: f64,
    pub efficiency_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StrategyKind {
    GreedyInfo,
    MyopicGainPerCost,
    OfflineUniform,
    FixedX { x: f64 },
    RandomUniform,
}

impl StrategyKind {
    pub fn is_offline(&self) -> bool {
        matches!(
            self,
            StrategyKind::OfflineUniform
                | StrategyKind::FixedX { .. }
                | StrategyKind::RandomUniform
        )
    }

    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::GreedyInfo => "greedy",
            StrategyKind::MyopicGainPerCost => "myopic",
            StrategyKind::OfflineUniform => "offline_uniform",
            StrategyKind::FixedX { .. } => "fixed",
            StrategyKind::RandomUniform => "random_uniform",
        }
    }
}

fn efficiency(objective: f64, sup: f64) -> f64 {
    if sup > 0.0 {
        (objective / sup).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

/// Argmax with ties going to the smallest placement (candidates are sorted).
fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, v) in values.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

fn check_costs(scores: &[CandidateScore], candidates: &CandidateSet) -> Result<()> {
    for (s, x) in scores.iter().zip(candidates.points()) {
        if !(s.expected_cost > 0.0) {
            return Err(Error::ModelViolation(format!(
                "expected cost {} at candidate {x} is not positive",
                s.expected_cost
            )));
        }
    }
    Ok(())
}

fn decide_scored(
    scores: &[CandidateScore],
    candidates: &CandidateSet,
    per_cost: bool,
) -> PlacementDecision {
    let objective = |s: &CandidateScore| {
        if per_cost {
            s.gain / s.expected_cost
        } else {
            s.gain
        }
    };
    let (j, best) = argmax(scores.iter().map(objective));
    PlacementDecision {
        x: candidates.points()[j],
        candidate_index: Some(j),
        expected_gain_nats: scores[j].gain,
        expected_cost: scores[j].expected_cost,
        objective: best,
        sup_objective: best,
        efficiency_ratio: 1.0,
    }
}

/// Candidate maximizing `I_t(Θ; Y_x)`; ties go to the smallest placement.
pub fn choose_greedy(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    candidates: &CandidateSet,
) -> PlacementDecision {
    choose_greedy_costed(post, model, &CostModel::unit(), candidates)
}

/// Greedy choice that also records the posterior-predictive expected cost.
pub fn choose_greedy_costed(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    cost: &CostModel,
    candidates: &CandidateSet,
) -> PlacementDecision {
    let scores = score_candidates(post, model, cost, candidates);
    decide_scored(&scores, candidates, false)
}

/// Candidate maximizing `I_t(Θ; Y_x) / E_t(C_x)`.
pub fn choose_myopic_cost_aware(
    post: &GridPosterior,
    model: &dyn ObservationModel,
    cost: &CostModel,
    candidates: &CandidateSet,
) -> Result<PlacementDecision> {
    let scores = score_candidates(post, model, cost, candidates);
    check_costs(&scores, candidates)?;
    Ok(decide_scored(&scores, candidates, true))
}

/// Bit-reversal ordering of `0..m`: every prefix is spread evenly over the
/// range and each full cycle visits every index once.
pub fn sweep_order(m: usize) -> Vec<usize> {
    let bits = usize::BITS - (m.max(2) - 1).leading_zeros();
    (0..(1usize << bits))
        .map(|i| i.reverse_bits() >> (usize::BITS - bits))
        .filter(|&i| i < m)
        .collect()
}

/// Posterior-independent placement. Gain and cost are still evaluated so the
/// trace can report the efficiency ratio against the best candidate (gain per
/// expected cost).
#[allow(clippy::too_many_arguments)]
pub fn choose_baseline(
    kind: &StrategyKind,
    t: usize,
    candidates: &CandidateSet,
    sweep: &[usize],
    rng: &mut dyn RngCore,
    post: &GridPosterior,
    model: &dyn ObservationModel,
    cost: &CostModel,
) -> Result<PlacementDecision> {
    let (x, index) = match kind {
        StrategyKind::OfflineUniform => {
            let j = sweep[t % sweep.len()];
            (candidates.points()[j], Some(j))
        }
        StrategyKind::FixedX { x } => {
            let idx = candidates.points().iter().position(|p| p == x);
            (*x, idx)
        }
        StrategyKind::RandomUniform => {
            let j = rng.random_range(0..candidates.len());
            (candidates.points()[j], Some(j))
        }
        other => {
            return Err(Error::parameter(
                "strategy",
                format!("{} is not a baseline strategy", other.label()),
            ))
        }
    };
    let scores = score_candidates(post, model, cost, candidates);
    check_costs(&scores, candidates)?;
    let own = match index {
        Some(j) => scores[j],
        None => score_direct(post, model, cost, x),
    };
    let objective = own.gain / own.expected_cost;
    let (_, sup) = argmax(scores.iter().map(|s| s.gain / s.expected_cost));
    let sup = sup.max(objective);
    Ok(PlacementDecision {
        x,
        candidate_index: index,
        expected_gain_nats: own.gain,
        expected_cost: own.expected_cost,
        objective,
        sup_objective: sup,
        efficiency_ratio: efficiency(objective, sup),
    })
}

/// A configured placement rule.
#[derive(Clone, Debug)]
pub struct Strategy {
    kind: StrategyKind,
    sweep: Vec<usize>,
}

impl Strategy {
    pub fn new(kind: StrategyKind, candidates: &CandidateSet) -> Self {
        Strategy {
            kind,
            sweep: sweep_order(candidates.len()),
        }
    }

    pub fn kind(&self) -> &StrategyKind {
        &self.kind
    }

    /// Placement for trial `t` (0-based).
    pub fn decide(
        &self,
        t: usize,
        post: &GridPosterior,
        model: &dyn ObservationModel,
        cost: &CostModel,
        candidates: &CandidateSet,
        rng: &mut dyn RngCore,
    ) -> Result<PlacementDecision> {
        match &self.kind {
            StrategyKind::GreedyInfo => Ok(choose_greedy_costed(post, model, cost, candidates)),
            StrategyKind::MyopicGainPerCost => {
                choose_myopic_cost_aware(post, model, cost, candidates)
            }
            kind => choose_baseline(kind, t, candidates, &self.sweep, rng, post, model, cost),
        }
    }
}
