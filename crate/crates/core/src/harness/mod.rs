//! Simulation runner, sweeps and persistence.

mod config;
mod io;
mod report;
mod twenty;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    CostSpec, DiagnosticsSpec, ExperimentConfig, ModelSpec, OutputSpec, PriorSpec, RunSpec,
    StrategySpec, SweepSpec, Theta0Spec,
};
pub use io::{
    parse_trace_csv, read_summary, read_trace_csv, trace_csv_bytes, write_run, write_sweep,
    write_trace_csv, TRACE_HEADER,
};
pub use report::{aggregate_traces, quantile, write_report_csv, ReportRow};
pub use twenty::{run_twenty_questions, QuestionRule, TwentyQuestionsScenario};

use crate::diagnostics::{
    tail_range, telescoping_error, AsymptoticReport, InfoBudget, MostTrials, MostTrialsParams,
    TraceRow, TrialRecord, TrialTrace,
};
use crate::doptimal::{
    solve_doptimal_refined, DesignWeights, Normalization, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::models::{
    expected_cost_at, CostModel, LinearGaussianModel, ObservationModel, OutcomeSpace,
    PsychometricModel,
};
use crate::posterior::{Axis, GridPosterior, ParameterGrid};
use crate::strategies::{CandidateSet, Strategy};

/// Version of the trace CSV header and summary JSON layout.
pub const FORMAT_VERSION: u32 = 1;
/// Largest `cells × candidates` product that gets a likelihood table.
pub const MAX_TABLE_ENTRIES: usize = 1 << 22;
/// Generator behind every replicate stream.
pub const RNG_NAME: &str = "ChaCha8Rng";

/// Random stream of replicate `index`: the generator seeded with
/// `seed + index`.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64))
}

/// A validated config with its model, grid, prior and candidates built.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: Arc<dyn ObservationModel>,
    pub cost: CostModel,
    pub grid: Arc<ParameterGrid>,
    pub prior: GridPosterior,
    pub candidates: CandidateSet,
    pub strategy: Strategy,
    pub x_bounds: (f64, f64),
}

fn build_cost(spec: &CostSpec) -> Result<CostModel> {
    let cost = match spec {
        CostSpec::Unit { jitter } => CostModel::unit().with_jitter(*jitter)?,
        CostSpec::Constant { value, jitter } => CostModel::constant(*value).with_jitter(*jitter)?,
        CostSpec::OutcomeLinear {
            base,
            on_zero,
            jitter,
        } => CostModel::outcome_linear(*base, *on_zero).with_jitter(*jitter)?,
        CostSpec::PerChannel { .. } => {
            return Err(Error::validation(
                "cost.kind",
                "per_channel costs are handled by the twenty-questions runner",
            ))
        }
    };
    cost.validate()?;
    Ok(cost)
}

fn build_prior(spec: &PriorSpec, grid: Arc<ParameterGrid>) -> Result<GridPosterior> {
    match spec {
        PriorSpec::Uniform => Ok(GridPosterior::uniform(grid)),
        PriorSpec::Normal { mean, sd } => GridPosterior::from_log_density(grid, |t| {
            t.iter()
                .zip(mean)
                .zip(sd)
                .map(|((v, m), s)| -0.5 * ((v - m) / s).powi(2))
                .sum()
        }),
    }
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let cost = build_cost(&config.cost)?;
        let (model, grid, candidates, x_bounds): (Arc<dyn ObservationModel>, _, _, _) =
            match &config.model {
                ModelSpec::Psychometric {
                    lower,
                    upper,
                    grid,
                    candidates,
                    x_lower,
                    x_upper,
                } => {
                    let xb = (x_lower.unwrap_or(*lower), x_upper.unwrap_or(*upper));
                    (
                        Arc::new(PsychometricModel::new(*lower, *upper)),
                        ParameterGrid::uniform(*lower, *upper, *grid)?,
                        CandidateSet::linspace(xb.0, xb.1, *candidates)?,
                        xb,
                    )
                }
                ModelSpec::LinearGaussian {
                    degree,
                    noise_sd,
                    lower,
                    upper,
                    grid,
                    candidates,
                    x_lower,
                    x_upper,
                } => {
                    let axes = lower
                        .iter()
                        .zip(upper)
                        .map(|(a, b)| Axis::new(*a, *b, *grid))
                        .collect();
                    (
                        Arc::new(LinearGaussianModel::polynomial(*degree, *noise_sd)),
                        ParameterGrid::new(axes)?,
                        CandidateSet::linspace(*x_lower, *x_upper, *candidates)?,
                        (*x_lower, *x_upper),
                    )
                }
                ModelSpec::TwentyQuestions { .. } => {
                    return Err(Error::validation(
                        "model.kind",
                        "twenty_questions runs through the twenty-questions runner",
                    ))
                }
            };
        let grid = Arc::new(grid);
        // Large tables cost more memory than the direct evaluation saves.
        let candidates = if grid.len() * candidates.len() <= MAX_TABLE_ENTRIES {
            candidates.tabulated(model.as_ref(), Arc::clone(&grid))
        } else {
            candidates
        };
        let prior = build_prior(&config.prior, Arc::clone(&grid))?;
        let strategy = Strategy::new(config.strategy.kind.clone(), &candidates);
        Ok(Experiment {
            config: config.clone(),
            model,
            cost,
            grid,
            prior,
            candidates,
            strategy,
            x_bounds,
        })
    }

    /// D-optimal reference at `theta0` under `normalization`, refined off the
    /// candidate grid.
    pub fn reference_design(
        &self,
        theta0: &[f64],
        normalization: Normalization,
    ) -> Result<DesignWeights> {
        solve_doptimal_refined(
            self.model.as_ref(),
            theta0,
            self.candidates.points(),
            self.x_bounds,
            &self.cost,
            normalization,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )
    }

    fn draw_theta0(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let w = self.prior.weights();
        let mut acc = 0.0;
        let mut cell = w.len() - 1;
        for (i, wi) in w.iter().enumerate() {
            acc += wi;
            if u < acc {
                cell = i;
                break;
            }
        }
        self.grid
            .point(cell)
            .iter()
            .zip(self.grid.axes())
            .map(|(c, ax)| c + (rng.random::<f64>() - 0.5) * ax.spacing())
            .collect()
    }

    /// One replicate's trial loop.
    pub fn simulate(&self, theta0: &[f64], rng: &mut ChaCha8Rng) -> Result<Simulation> {
        let run = &self.config.run;
        let model = self.model.as_ref();
        let outcomes = match model.outcome_space() {
            OutcomeSpace::Finite(ys) => Some(ys.clone()),
            OutcomeSpace::Continuous { .. } => None,
        };
        let mut post = self.prior.clone();
        let mut entropy = post.differential_entropy();
        let mut trace = TrialTrace::new(model.dim(), entropy);
        let mut cum_cost = 0.0;
        let limit = run.trials.unwrap_or(run.max_trials);
        let mut flag = None;
        for t in 0..limit {
            let decision =
                self.strategy
                    .decide(t, &post, model, &self.cost, &self.candidates, rng)?;
            let x = decision.x;
            let y = model.sample(theta0, x, rng);
            let cost = self.cost.sample(y, x, rng);
            let table_row = match (self.candidates.table(), decision.candidate_index, &outcomes) {
                (Some(table), Some(j), Some(ys)) => ys
                    .iter()
                    .position(|v| *v == y)
                    .map(|k| table.log_likelihood_row(j, k)),
                _ => None,
            };
            let updated = match table_row {
                Some(row) => post.update_with_log_likelihoods(x, y, row),
                None => post.update_in_place(model, x, y),
            };
            if let Err(e) = updated {
                match e {
                    Error::ImpossibleObservation { .. } => {
                        flag = Some(format!("aborted at trial {}: {e}", t + 1));
                        break;
                    }
                    other => return Err(other),
                }
            }
            let next_entropy = post.differential_entropy();
            cum_cost += cost;
            trace.records.push(TrialRecord {
                t: t + 1,
                x,
                y,
                cost,
                cum_cost,
                gain_nats: entropy - next_entropy,
                entropy_nats: next_entropy,
                observed_info: model.neg_hessian(y, theta0, x),
                fisher_at_truth: model.fisher(theta0, x),
                expected_cost_at_truth: expected_cost_at(&self.cost, model, x, theta0)?,
                efficiency_ratio: decision.efficiency_ratio,
                entropy_plus_kl: next_entropy + post.kl_divergence(&self.prior),
            });
            entropy = next_entropy;
            if let Some(budget) = run.budget {
                if cum_cost > budget {
                    trace.budget_overrun = true;
                    break;
                }
            }
        }
        if run.budget.is_some() && !trace.budget_overrun && flag.is_none() {
            flag = Some(format!("cost budget not exhausted within {limit} trials"));
        }
        Ok(Simulation {
            trace,
            posterior: post,
            flag,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub trace: TrialTrace,
    pub posterior: GridPosterior,
    /// Why the replicate stopped early, if it did.
    pub flag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub index: usize,
    pub seed: u64,
    pub theta0: Vec<f64>,
    pub trials: usize,
    pub cum_cost: f64,
    pub budget_overrun: bool,
    pub final_entropy_nats: f64,
    pub final_det_bt_unit: f64,
    pub final_det_bt_cost: f64,
    pub final_residual_unit: f64,
    pub final_residual_cost: f64,
    pub final_ratio: f64,
    pub posterior_mean: Vec<f64>,
    pub most_trials_unit: Option<MostTrials>,
    pub most_trials_cost: Option<MostTrials>,
    pub info_budget: Option<InfoBudget>,
    pub telescoping_error: f64,
    /// Spread of `H_t + KL(p_t ‖ p_0)` over the last quarter of the run.
    pub stabilization_range: f64,
    /// Final posterior mass within `diagnostics.local_radius` of θ₀.
    pub local_mass: Option<f64>,
    pub flag: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ReplicateResult {
    pub summary: ReplicateSummary,
    pub trace: TrialTrace,
    pub rows: Vec<TraceRow>,
    pub report: Option<AsymptoticReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDesign {
    pub theta0: Vec<f64>,
    pub unit: DesignWeights,
    pub cost: DesignWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub rng: String,
    pub model: String,
    pub strategy: String,
    pub seed: u64,
    pub replicates: usize,
    /// Reference for a fixed θ₀; per-replicate references are not stored
    /// when θ₀ is drawn from the prior.
    pub reference: Option<ReferenceDesign>,
    pub median_final_det_bt_unit: f64,
    pub median_final_det_bt_cost: f64,
    pub median_final_residual_unit: f64,
    pub median_final_residual_cost: f64,
    pub median_final_ratio: f64,
    pub flagged_replicates: usize,
    pub replicate_summaries: Vec<ReplicateSummary>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub summary: RunSummary,
    pub replicates: Vec<ReplicateResult>,
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn summarize_replicate(
    index: usize,
    seed: u64,
    theta0: Vec<f64>,
    trace: TrialTrace,
    post_mean: Vec<f64>,
    h_star: Option<(f64, f64)>,
    params: MostTrialsParams,
    mut flag: Option<String>,
) -> ReplicateResult {
    let (hu, hc) = h_star.unwrap_or((f64::NAN, f64::NAN));
    let rows = trace.rows(hu, hc);
    let report = if rows.is_empty() || h_star.is_none() {
        None
    } else {
        match AsymptoticReport::from_rows(&rows, trace.dim, params) {
            Ok(r) => Some(r),
            Err(e) => {
                flag.get_or_insert_with(|| e.to_string());
                None
            }
        }
    };
    let last = rows.last();
    let get = |f: fn(&TraceRow) -> f64| last.map(f).unwrap_or(f64::NAN);
    let stab: Vec<f64> = trace.records.iter().map(|r| r.entropy_plus_kl).collect();
    let summary = ReplicateSummary {
        index,
        seed,
        theta0,
        trials: rows.len(),
        cum_cost: get(|r| r.cum_cost),
        budget_overrun: trace.budget_overrun,
        final_entropy_nats: get(|r| r.entropy_nats),
        final_det_bt_unit: get(|r| r.det_bt_unit),
        final_det_bt_cost: get(|r| r.det_bt_cost),
        final_residual_unit: get(|r| r.residual_unit),
        final_residual_cost: get(|r| r.residual_cost),
        final_ratio: crate::diagnostics::gain_cost_ratio(&trace)
            .last()
            .copied()
            .unwrap_or(f64::NAN),
        posterior_mean: post_mean,
        most_trials_unit: report.as_ref().map(|r| r.most_trials_unit),
        most_trials_cost: report.as_ref().map(|r| r.most_trials_cost),
        info_budget: report.as_ref().and_then(|r| r.info_budget.clone()),
        telescoping_error: telescoping_error(&trace),
        stabilization_range: tail_range(&stab, 0.25),
        local_mass: None,
        flag,
    };
    ReplicateResult {
        summary,
        trace,
        rows,
        report,
    }
}

fn h_star_pair(design: &(DesignWeights, DesignWeights)) -> (f64, f64) {
    (design.0.h_star_nats, design.1.h_star_nats)
}

/// Runs every replicate of `config`. Replicate `r` uses the stream
/// `seed + r`, so results do not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    if let ModelSpec::TwentyQuestions { .. } = config.model {
        return twenty::run_from_config(config);
    }
    let exp = Experiment::build(config)?;
    let params = MostTrialsParams {
        eps: config.diagnostics.eps,
        tail: config.diagnostics.tail,
        threshold: config.diagnostics.threshold,
    };
    let fixed = config.theta0()?;
    let fixed_reference = match &fixed {
        Some(t) => Some((
            exp.reference_design(t, Normalization::UnitCost)?,
            exp.reference_design(t, Normalization::PerCost)?,
        )),
        None => None,
    };
    let seed = config.run.seed;
    let replicates: Vec<ReplicateResult> = (0..config.run.replicates)
        .into_par_iter()
        .map(|r| -> Result<ReplicateResult> {
            let mut rng = replicate_rng(seed, r);
            let theta0 = match &fixed {
                Some(t) => t.clone(),
                None => exp.draw_theta0(&mut rng),
            };
            let h_star = match &fixed_reference {
                Some(d) => Some(h_star_pair(d)),
                None => {
                    match (
                        exp.reference_design(&theta0, Normalization::UnitCost),
                        exp.reference_design(&theta0, Normalization::PerCost),
                    ) {
                        (Ok(u), Ok(c)) => Some(h_star_pair(&(u, c))),
                        _ => None,
                    }
                }
            };
            let sim = exp.simulate(&theta0, &mut rng)?;
            let local_mass = config.diagnostics.local_radius.map(|radius| {
                sim.posterior
                    .local_summary(&theta0, radius)
                    .map_or(0.0, |l| l.mass)
            });
            let mut result = summarize_replicate(
                r,
                seed.wrapping_add(r as u64),
                theta0,
                sim.trace,
                sim.posterior.summarize().mean,
                h_star,
                params,
                sim.flag,
            );
            result.summary.local_mass = local_mass;
            Ok(result)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize_run(
        config,
        fixed
            .zip(fixed_reference)
            .map(|(theta0, (unit, cost))| ReferenceDesign { theta0, unit, cost }),
        &replicates,
    );
    Ok(RunResult {
        config: config.clone(),
        summary,
        replicates,
    })
}

pub(crate) fn summarize_run(
    config: &ExperimentConfig,
    reference: Option<ReferenceDesign>,
    replicates: &[ReplicateResult],
) -> RunSummary {
    let col = |f: fn(&ReplicateSummary) -> f64| {
        replicates.iter().map(|r| f(&r.summary)).collect::<Vec<_>>()
    };
    RunSummary {
        format_version: FORMAT_VERSION,
        rng: RNG_NAME.to_string(),
        model: config.model.label().to_string(),
        strategy: config.strategy.kind.label().to_string(),
        seed: config.run.seed,
        replicates: replicates.len(),
        reference,
        median_final_det_bt_unit: median(&col(|s| s.final_det_bt_unit)),
        median_final_det_bt_cost: median(&col(|s| s.final_det_bt_cost)),
        median_final_residual_unit: median(&col(|s| s.final_residual_unit)),
        median_final_residual_cost: median(&col(|s| s.final_residual_cost)),
        median_final_ratio: median(&col(|s| s.final_ratio)),
        flagged_replicates: replicates
            .iter()
            .filter(|r| r.summary.flag.is_some())
            .count(),
        replicate_summaries: replicates.iter().map(|r| r.summary.clone()).collect(),
    }
}

/// What a sweep varies between runs.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepPlan {
    Theta0(Vec<Vec<f64>>),
    Seeds(Vec<u64>),
    /// `n` runs with θ₀ drawn from the prior.
    PriorDraws(usize),
}

impl SweepPlan {
    /// Plan from the `[sweep]` section; `None` when the section is absent.
    pub fn from_config(config: &ExperimentConfig) -> Result<Option<Self>> {
        let Some(s) = &config.sweep else {
            return Ok(None);
        };
        let given = [
            s.theta0.is_some(),
            s.seeds.is_some(),
            s.prior_draws.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if given != 1 {
            return Err(Error::validation(
                "sweep",
                "give exactly one of theta0, seeds or prior_draws",
            ));
        }
        if let Some(list) = &s.theta0 {
            let mut out = Vec::new();
            for t in list {
                match config::theta0_value(t, "sweep.theta0")? {
                    Some(v) => out.push(v),
                    None => {
                        return Err(Error::validation("sweep.theta0", "entries must be numbers"))
                    }
                }
            }
            return Ok(Some(SweepPlan::Theta0(out)));
        }
        if let Some(seeds) = &s.seeds {
            return Ok(Some(SweepPlan::Seeds(seeds.clone())));
        }
        Ok(s.prior_draws.map(SweepPlan::PriorDraws))
    }

    pub fn len(&self) -> usize {
        match self {
            SweepPlan::Theta0(v) => v.len(),
            SweepPlan::Seeds(v) => v.len(),
            SweepPlan::PriorDraws(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub theta0: Option<Vec<f64>>,
    pub seed: u64,
    pub summary: RunSummary,
    pub median_posterior_mean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub format_version: u32,
    pub rng: String,
    pub entries: Vec<SweepEntry>,
    pub median_final_det_bt_unit: f64,
    pub median_final_residual_unit: f64,
    pub flagged_runs: usize,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub summary: SweepSummary,
    pub runs: Vec<RunResult>,
}

/// Independent runs of `config`, one per entry of `plan`. Replicate flags are
/// propagated into the summary without aborting the sweep.
pub fn run_sweep(config: &ExperimentConfig, plan: &SweepPlan) -> Result<SweepResult> {
    if plan.is_empty() {
        return Err(Error::validation("sweep", "sweep list is empty"));
    }
    config.validate()?;
    let mut variants = Vec::new();
    match plan {
        SweepPlan::Theta0(list) => {
            for t in list {
                let mut c = config.clone();
                c.run.theta0 = Theta0Spec::Vector(t.clone());
                c.validate().map_err(|e| match e {
                    Error::Validation { reason, .. } => Error::validation("sweep.theta0", reason),
                    other => other,
                })?;
                variants.push((format!("theta0={t:?}"), c));
            }
        }
        SweepPlan::Seeds(seeds) => {
            for s in seeds {
                let mut c = config.clone();
                c.run.seed = *s;
                variants.push((format!("seed={s}"), c));
            }
        }
        SweepPlan::PriorDraws(n) => {
            for k in 0..*n {
                let mut c = config.clone();
                c.run.theta0 = Theta0Spec::Named("prior".into());
                c.run.seed = config
                    .run
                    .seed
                    .wrapping_add((k * config.run.replicates) as u64);
                variants.push((format!("draw={k}"), c));
            }
        }
    }
    let mut runs = Vec::new();
    let mut entries = Vec::new();
    for (label, c) in variants {
        let result = run_experiment(&c)?;
        let dim = c.model.dim();
        let median_mean = (0..dim)
            .map(|d| {
                let v: Vec<f64> = result
                    .replicates
                    .iter()
                    .filter_map(|r| r.summary.posterior_mean.get(d).copied())
                    .collect();
                median(&v)
            })
            .collect();
        entries.push(SweepEntry {
            label,
            theta0: c.theta0()?,
            seed: c.run.seed,
            summary: result.summary.clone(),
            median_posterior_mean: median_mean,
        });
        runs.push(result);
    }
    let col = |f: fn(&RunSummary) -> f64| entries.iter().map(|e| f(&e.summary)).collect::<Vec<_>>();
    let summary = SweepSummary {
        format_version: FORMAT_VERSION,
        rng: RNG_NAME.to_string(),
        median_final_det_bt_unit: median(&col(|s| s.median_final_det_bt_unit)),
        median_final_residual_unit: median(&col(|s| s.median_final_residual_unit)),
        flagged_runs: entries
            .iter()
            .filter(|e| e.summary.flagged_replicates > 0)
            .count(),
        entries,
    };
    Ok(SweepResult { summary, runs })
}
