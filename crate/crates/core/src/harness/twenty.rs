//! Twenty-questions scenario with priced question channels.
//!
//! The game restarts with a fresh uniformly drawn `Θ` whenever the posterior
//! collapses to a single value, so long runs keep asking informative
//! questions instead of stalling at zero gain.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{MostTrialsParams, TrialRecord, TrialTrace};
use crate::error::{Error, Result};
use crate::models::{ObservationModel, TwentyQuestionsModel};
use crate::posterior::{GridPosterior, ParameterGrid};
use crate::strategies::StrategyKind;

use super::{
    replicate_rng, summarize_replicate, summarize_run, CostSpec, ExperimentConfig, ModelSpec,
    RunResult,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuestionRule {
    /// Maximize expected gain, ignoring price.
    Greedy,
    /// Maximize expected gain per unit price.
    Myopic,
    /// Myopic, except every `costly_every`-th question goes through the most
    /// expensive channel.
    Mixed { costly_every: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwentyQuestionsScenario {
    pub bits: u32,
    /// Price of each channel; the channel count is the length.
    pub channel_costs: Vec<f64>,
    pub rule: QuestionRule,
    pub trials: Option<usize>,
    pub budget: Option<f64>,
    pub max_trials: usize,
    /// Initial `Θ`; `None` draws it uniformly.
    pub theta0: Option<u64>,
}

fn binary_entropy(p: f64) -> f64 {
    let h = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Most balanced threshold question: `(threshold, gain)`, ties to the
/// smallest threshold. Thresholds only need to be checked at cells with mass.
fn best_split(post: &GridPosterior) -> (f64, f64) {
    let w = post.weights();
    let mut acc = 0.0;
    let mut best = (0.0, 0.0);
    let active = post.active_cells();
    for &i in &active[..active.len().saturating_sub(1)] {
        acc += w[i];
        let g = binary_entropy(acc);
        if g > best.1 {
            best = (post.grid().point(i)[0], g);
        }
    }
    best
}

/// Runs the scenario with one replicate stream. Placement encodes the
/// channel as in [`TwentyQuestionsModel`].
pub fn run_twenty_questions(
    scenario: &TwentyQuestionsScenario,
    rng: &mut ChaCha8Rng,
) -> Result<(TrialTrace, u64)> {
    let costs = &scenario.channel_costs;
    if costs.is_empty() || costs.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::parameter(
            "channel_costs",
            "need positive channel costs",
        ));
    }
    let model = TwentyQuestionsModel::new(scenario.bits, costs.len());
    let size = model.size() as u64;
    let grid = std::sync::Arc::new(ParameterGrid::integers(model.size())?);
    let prior = GridPosterior::uniform(grid);
    let mut theta = match scenario.theta0 {
        Some(t) if (1..=size).contains(&t) => t,
        Some(t) => {
            return Err(Error::parameter(
                "theta0",
                format!("{t} outside 1..={size}"),
            ))
        }
        None => rng.random_range(1..=size),
    };
    let first_theta = theta;
    let cheapest = argmin_cost(costs, f64::lt);
    let priciest = argmin_cost(costs, f64::gt);
    let mut post = prior.clone();
    let mut entropy = post.differential_entropy();
    let mut trace = TrialTrace::new(1, entropy);
    let mut cum_cost = 0.0;
    let limit = scenario.trials.unwrap_or(scenario.max_trials);
    for t in 0..limit {
        let (threshold, gain) = best_split(&post);
        let channel = match scenario.rule {
            QuestionRule::Greedy => 0,
            QuestionRule::Myopic => cheapest,
            QuestionRule::Mixed { costly_every } if (t + 1) % costly_every == 0 => priciest,
            QuestionRule::Mixed { .. } => cheapest,
        };
        let x = model.placement(channel, threshold);
        let y = model.sample(&[theta as f64], x, rng);
        let cost = costs[channel];
        post.update_in_place(&model, x, y)?;
        let next = post.differential_entropy();
        cum_cost += cost;
        let sup = gain / costs[cheapest];
        trace.records.push(TrialRecord {
            t: t + 1,
            x,
            y,
            cost,
            cum_cost,
            gain_nats: entropy - next,
            entropy_nats: next,
            observed_info: DMatrix::zeros(1, 1),
            fisher_at_truth: DMatrix::zeros(1, 1),
            expected_cost_at_truth: cost,
            efficiency_ratio: if sup > 0.0 { (gain / cost) / sup } else { 1.0 },
            entropy_plus_kl: next + post.kl_divergence(&prior),
        });
        entropy = next;
        if post.active_cells().len() == 1 {
            theta = rng.random_range(1..=size);
            post = prior.clone();
            entropy = post.differential_entropy();
        }
        if scenario.budget.is_some_and(|b| cum_cost > b) {
            trace.budget_overrun = true;
            break;
        }
    }
    Ok((trace, first_theta))
}

fn argmin_cost(costs: &[f64], better: fn(&f64, &f64) -> bool) -> usize {
    let mut best = 0;
    for (j, c) in costs.iter().enumerate() {
        if better(c, &costs[best]) {
            best = j;
        }
    }
    best
}

pub(super) fn run_from_config(config: &ExperimentConfig) -> Result<RunResult> {
    let ModelSpec::TwentyQuestions { bits } = config.model else {
        unreachable!("caller dispatches on the model kind")
    };
    let CostSpec::PerChannel { costs } = &config.cost else {
        return Err(Error::validation("cost.kind", "expected per_channel"));
    };
    let rule = match (&config.strategy.kind, config.strategy.costly_every) {
        (_, Some(k)) => QuestionRule::Mixed { costly_every: k },
        (StrategyKind::MyopicGainPerCost, None) => QuestionRule::Myopic,
        _ => QuestionRule::Greedy,
    };
    let fixed = config.theta0()?;
    let scenario = TwentyQuestionsScenario {
        bits,
        channel_costs: costs.clone(),
        rule,
        trials: config.run.trials,
        budget: config.run.budget,
        max_trials: config.run.max_trials,
        theta0: fixed.as_ref().map(|t| t[0].round() as u64),
    };
    let params = MostTrialsParams {
        eps: config.diagnostics.eps,
        tail: config.diagnostics.tail,
        threshold: config.diagnostics.threshold,
    };
    let mut replicates = Vec::new();
    for r in 0..config.run.replicates {
        let mut rng = replicate_rng(config.run.seed, r);
        let (trace, theta) = run_twenty_questions(&scenario, &mut rng)?;
        let flag = (config.run.budget.is_some() && !trace.budget_overrun)
            .then(|| "cost budget not exhausted".to_string());
        replicates.push(summarize_replicate(
            r,
            config.run.seed.wrapping_add(r as u64),
            vec![theta as f64],
            trace,
            Vec::new(),
            None,
            params,
            flag,
        ));
    }
    Ok(RunResult {
        config: config.clone(),
        summary: summarize_run(config, None, &replicates),
        replicates,
    })
}
