//! Asymptotic diagnostics computed from simulated trial traces.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::log_det_spd;

/// One simulated trial. Information matrices are evaluated at the true
/// parameter, which is why diagnostics only exist in simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    /// 1-based trial index.
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub cost: f64,
    pub cum_cost: f64,
    /// Realized entropy decrease `H_{t-1} - H_t`.
    pub gain_nats: f64,
    pub entropy_nats: f64,
    pub observed_info: DMatrix<f64>,
    pub fisher_at_truth: DMatrix<f64>,
    pub expected_cost_at_truth: f64,
    pub efficiency_ratio: f64,
    /// `H_t + KL(p_t ‖ p_0)`.
    pub entropy_plus_kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialTrace {
    pub dim: usize,
    pub initial_entropy: f64,
    pub records: Vec<TrialRecord>,
    /// The final trial pushed cumulative cost over the budget.
    pub budget_overrun: bool,
}

impl TrialTrace {
    pub fn new(dim: usize, initial_entropy: f64) -> Self {
        TrialTrace {
            dim,
            initial_entropy,
            records: Vec::new(),
            budget_overrun: false,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks the trace invariants: strictly increasing cumulative cost,
    /// costs in `(0, max_cost]`, finite entropies.
    pub fn validate(&self, max_cost: f64) -> Result<()> {
        let mut prev = 0.0;
        for r in &self.records {
            if !(r.cost > 0.0 && r.cost <= max_cost) {
                return Err(Error::ModelViolation(format!(
                    "trial {}: cost {} outside (0, {max_cost}]",
                    r.t, r.cost
                )));
            }
            if !(r.cum_cost > prev) {
                return Err(Error::ModelViolation(format!(
                    "trial {}: cumulative cost not increasing",
                    r.t
                )));
            }
            if !r.entropy_nats.is_finite() {
                return Err(Error::ModelViolation(format!(
                    "trial {}: entropy not finite",
                    r.t
                )));
            }
            prev = r.cum_cost;
        }
        Ok(())
    }

    /// Per-trial CSV rows with the derived columns filled in.
    pub fn rows(&self, h_star_unit: f64, h_star_cost: f64) -> Vec<TraceRow> {
        let det_unit = track_b_det(self, Clock::UnitTime);
        let det_cost = track_b_det(self, Clock::Cost);
        let res_unit = entropy_residual(self, h_star_unit, Clock::UnitTime);
        let res_cost = entropy_residual(self, h_star_cost, Clock::Cost);
        self.records
            .iter()
            .enumerate()
            .map(|(k, r)| TraceRow {
                t: r.t,
                x: r.x,
                y: r.y,
                cost: r.cost,
                cum_cost: r.cum_cost,
                gain_nats: r.gain_nats,
                entropy_nats: r.entropy_nats,
                det_bt_unit: det_unit[k],
                det_bt_cost: det_cost[k],
                residual_unit: res_unit[k],
                residual_cost: res_cost[k],
                efficiency_ratio: r.efficiency_ratio,
            })
            .collect()
    }
}

/// One line of the trace CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub cost: f64,
    pub cum_cost: f64,
    pub gain_nats: f64,
    pub entropy_nats: f64,
    #[serde(rename = "det_Bt_unit")]
    pub det_bt_unit: f64,
    #[serde(rename = "det_Bt_cost")]
    pub det_bt_cost: f64,
    pub residual_unit: f64,
    pub residual_cost: f64,
    pub efficiency_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    UnitTime,
    Cost,
}

/// Proportion `|K ∩ [a, b)| / (b - a)` of integers satisfying `member`.
pub fn rho(member: impl Fn(i64) -> bool, a: i64, b: i64) -> Result<f64> {
    if a >= b {
        return Err(Error::parameter("rho", format!("empty window [{a}, {b})")));
    }
    let count = (a..b).filter(|&k| member(k)).count();
    Ok(count as f64 / (b - a) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MostTrials {
    pub fraction: f64,
    pub verdict: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MostTrialsParams {
    pub eps: f64,
    /// Trailing fraction of the series that is inspected.
    pub tail: f64,
    pub threshold: f64,
}

impl Default for MostTrialsParams {
    fn default() -> Self {
        MostTrialsParams {
            eps: 0.15,
            tail: 0.5,
            threshold: 0.95,
        }
    }
}

/// Fraction of the trailing window within `eps` of `limit`.
pub fn most_trials_converges(
    series: &[f64],
    limit: f64,
    params: MostTrialsParams,
) -> Result<MostTrials> {
    if series.is_empty() {
        return Err(Error::parameter("series", "empty"));
    }
    if !(params.eps > 0.0) {
        return Err(Error::parameter("eps", "must be positive"));
    }
    if !(params.tail > 0.0 && params.tail <= 1.0) {
        return Err(Error::parameter("tail", "must be in (0, 1]"));
    }
    let len = ((series.len() as f64 * params.tail).ceil() as usize).clamp(1, series.len());
    let window = &series[series.len() - len..];
    let hits = window
        .iter()
        .filter(|v| (*v - limit).abs() < params.eps)
        .count();
    let fraction = hits as f64 / len as f64;
    Ok(MostTrials {
        fraction,
        verdict: fraction >= params.threshold,
    })
}

fn clock_value(r: &TrialRecord, clock: Clock) -> f64 {
    match clock {
        Clock::UnitTime => r.t as f64,
        Clock::Cost => r.cum_cost,
    }
}

/// `B_t = Σ_k observed_info_k / clock_t`.
pub fn track_b(trace: &TrialTrace, clock: Clock) -> Vec<DMatrix<f64>> {
    let n = trace.dim;
    let mut acc = DMatrix::zeros(n, n);
    trace
        .records
        .iter()
        .map(|r| {
            acc += &r.observed_info;
            &acc / clock_value(r, clock)
        })
        .collect()
}

/// `det B_t` without materializing the matrix series.
pub fn track_b_det(trace: &TrialTrace, clock: Clock) -> Vec<f64> {
    let n = trace.dim;
    let mut acc = DMatrix::zeros(n, n);
    trace
        .records
        .iter()
        .map(|r| {
            acc += &r.observed_info;
            let b = &acc / clock_value(r, clock);
            if n == 1 {
                b[(0, 0)]
            } else {
                b.determinant()
            }
        })
        .collect()
}

/// `(1/t) Σ_k I_{x_k}(θ₀)` (or divided by `C_t`).
pub fn track_fisher_average(trace: &TrialTrace, clock: Clock) -> Vec<DMatrix<f64>> {
    let n = trace.dim;
    let mut acc = DMatrix::zeros(n, n);
    trace
        .records
        .iter()
        .map(|r| {
            acc += &r.fisher_at_truth;
            &acc / clock_value(r, clock)
        })
        .collect()
}

/// `H_t + (n/2) log(clock_t) - H*`.
pub fn entropy_residual(trace: &TrialTrace, h_star: f64, clock: Clock) -> Vec<f64> {
    let half_n = 0.5 * trace.dim as f64;
    trace
        .records
        .iter()
        .map(|r| r.entropy_nats + half_n * clock_value(r, clock).ln() - h_star)
        .collect()
}

/// Running ratio of cumulative realized gain to cumulative cost.
pub fn gain_cost_ratio(trace: &TrialTrace) -> Vec<f64> {
    gain_cost_ratio_from(trace.records.iter().map(|r| (r.gain_nats, r.cost)))
}

fn gain_cost_ratio_from(pairs: impl Iterator<Item = (f64, f64)>) -> Vec<f64> {
    let (mut g, mut c) = (0.0, 0.0);
    pairs
        .map(|(gain, cost)| {
            g += gain;
            c += cost;
            g / c
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoBudget {
    /// Running maximum of `Σ_{k≤t} g_k - n log t` at the end of the run.
    pub c_fit: f64,
    pub verdict: bool,
    /// Increase of the running maximum over the last quarter.
    pub last_quarter_increase: f64,
}

pub const INFO_BUDGET_MIN_LEN: usize = 100;
pub const INFO_BUDGET_TOLERANCE: f64 = 0.1;

/// Checks that cumulative realized gain stays below `n log t + c`.
pub fn info_budget_check(trace: &TrialTrace, n: usize) -> Result<InfoBudget> {
    let gains: Vec<f64> = trace.records.iter().map(|r| r.gain_nats).collect();
    info_budget_from_gains(&gains, n)
}

/// Same check on a bare per-trial gain series.
pub fn info_budget_from_gains(gains: &[f64], n: usize) -> Result<InfoBudget> {
    if gains.len() < INFO_BUDGET_MIN_LEN {
        return Err(Error::parameter(
            "trace",
            format!(
                "needs at least {INFO_BUDGET_MIN_LEN} trials, got {}",
                gains.len()
            ),
        ));
    }
    let mut cum = 0.0;
    let mut run_max = f64::NEG_INFINITY;
    let mut maxima = Vec::with_capacity(gains.len());
    for (k, g) in gains.iter().enumerate() {
        cum += g;
        run_max = run_max.max(cum - n as f64 * ((k + 1) as f64).ln());
        maxima.push(run_max);
    }
    let quarter = (3 * gains.len()) / 4;
    let increase = run_max - maxima[quarter.saturating_sub(1)];
    Ok(InfoBudget {
        c_fit: run_max,
        verdict: increase < INFO_BUDGET_TOLERANCE,
        last_quarter_increase: increase,
    })
}

/// `|Σ g_t - (H_0 - H_T)|`; zero up to rounding when gains are realized.
pub fn telescoping_error(trace: &TrialTrace) -> f64 {
    let Some(last) = trace.records.last() else {
        return 0.0;
    };
    let sum: f64 = trace.records.iter().map(|r| r.gain_nats).sum();
    (sum - (trace.initial_entropy - last.entropy_nats)).abs()
}

/// Whether `γ t ≤ C_t ≤ M t` holds at every trial.
pub fn cost_bounds_hold(trace: &TrialTrace, gamma: f64, max_cost: f64) -> bool {
    trace.records.iter().all(|r| {
        let t = r.t as f64;
        r.cum_cost >= gamma * t && r.cum_cost <= max_cost * t * (1.0 + 1e-12)
    })
}

/// Spread (max - min) of a series over its trailing `tail` fraction.
pub fn tail_range(series: &[f64], tail: f64) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let len = ((series.len() as f64 * tail).ceil() as usize).clamp(1, series.len());
    let w = &series[series.len() - len..];
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = w.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Series-level diagnostics of one replicate. Everything here is derived
/// from the CSV columns, so a re-read trace reproduces it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub det_b_unit: Vec<f64>,
    pub det_b_cost: Vec<f64>,
    pub residual_unit: Vec<f64>,
    pub residual_cost: Vec<f64>,
    pub ratio: Vec<f64>,
    pub most_trials_unit: MostTrials,
    pub most_trials_cost: MostTrials,
    pub info_budget: Option<InfoBudget>,
}

impl AsymptoticReport {
    pub fn from_rows(rows: &[TraceRow], dim: usize, params: MostTrialsParams) -> Result<Self> {
        let col = |f: fn(&TraceRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
        let residual_unit = col(|r| r.residual_unit);
        let residual_cost = col(|r| r.residual_cost);
        let gains = col(|r| r.gain_nats);
        Ok(AsymptoticReport {
            det_b_unit: col(|r| r.det_bt_unit),
            det_b_cost: col(|r| r.det_bt_cost),
            most_trials_unit: most_trials_converges(&residual_unit, 0.0, params)?,
            most_trials_cost: most_trials_converges(&residual_cost, 0.0, params)?,
            ratio: gain_cost_ratio_from(rows.iter().map(|r| (r.gain_nats, r.cost))),
            info_budget: info_budget_from_gains(&gains, dim).ok(),
            residual_unit,
            residual_cost,
        })
    }

    pub fn len(&self) -> usize {
        self.det_b_unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.det_b_unit.is_empty()
    }
}

/// `log det` of the final unit-time `B_t`, `-inf` if singular.
pub fn final_log_det(trace: &TrialTrace, clock: Clock) -> f64 {
    track_b(trace, clock)
        .last()
        .map(log_det_spd)
        .unwrap_or(f64::NEG_INFINITY)
}
