//! Experiment configuration files.
//!
//! A config is a sectioned `key = value` file in TOML syntax. Every key is
//! optional except `[model] kind` and one stopping rule in `[run]`.
//!
//! ```toml
//! [model]
//! kind = "psychometric"     # psychometric | linear_gaussian | twenty_questions
//! lower = 0.0               # parameter bounds
//! upper = 100.0
//! grid = 1024               # cells per parameter axis
//! candidates = 512          # placements, evenly spaced over [x_lower, x_upper]
//!
//! [cost]
//! kind = "outcome_linear"   # unit | constant | outcome_linear | per_channel
//! base = 1.0
//! on_zero = 3.0
//!
//! [strategy]
//! kind = "myopic_gain_per_cost"
//!
//! [run]
//! theta0 = 50.0             # number, array, or "prior"
//! trials = 20000            # or: budget = 5000.0
//! replicates = 20
//! seed = 1
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategies::StrategyKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub strategy: StrategySpec,
    pub run: RunSpec,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_lower() -> f64 {
    0.0
}
fn default_upper() -> f64 {
    100.0
}
fn default_grid() -> usize {
    1024
}
fn default_candidates() -> usize {
    512
}
fn default_channels() -> Vec<f64> {
    vec![1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Psychometric {
        #[serde(default = "default_lower")]
        lower: f64,
        #[serde(default = "default_upper")]
        upper: f64,
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default = "default_candidates")]
        candidates: usize,
        #[serde(default)]
        x_lower: Option<f64>,
        #[serde(default)]
        x_upper: Option<f64>,
    },
    LinearGaussian {
        degree: usize,
        noise_sd: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default = "default_grid")]
        grid: usize,
        #[serde(default = "default_candidates")]
        candidates: usize,
        x_lower: f64,
        x_upper: f64,
    },
    /// Noiseless threshold questions about `Θ ∈ {1, …, 2^bits}`; each entry
    /// of `[cost] costs` adds a question channel with that price.
    TwentyQuestions { bits: u32 },
}

impl ModelSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Psychometric { .. } => "psychometric",
            ModelSpec::LinearGaussian { .. } => "linear_gaussian",
            ModelSpec::TwentyQuestions { .. } => "twenty_questions",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::LinearGaussian { degree, .. } => degree + 1,
            _ => 1,
        }
    }

    /// Parameter box `(lower, upper)`.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ModelSpec::Psychometric { lower, upper, .. } => (vec![*lower], vec![*upper]),
            ModelSpec::LinearGaussian { lower, upper, .. } => (lower.clone(), upper.clone()),
            ModelSpec::TwentyQuestions { bits } => (vec![0.5], vec![(1u64 << bits) as f64 + 0.5]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSpec {
    Unit {
        #[serde(default)]
        jitter: f64,
    },
    Constant {
        value: f64,
        #[serde(default)]
        jitter: f64,
    },
    OutcomeLinear {
        base: f64,
        on_zero: f64,
        #[serde(default)]
        jitter: f64,
    },
    /// Price per question channel (twenty-questions only).
    PerChannel {
        #[serde(default = "default_channels")]
        costs: Vec<f64>,
    },
}

impl Default for CostSpec {
    fn default() -> Self {
        CostSpec::Unit { jitter: 0.0 }
    }
}

// `deny_unknown_fields` does not combine with `flatten`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    #[serde(flatten)]
    pub kind: StrategyKind,
    /// Twenty-questions only: force the most expensive channel on every
    /// `costly_every`-th question.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costly_every: Option<usize>,
}

impl Default for StrategySpec {
    fn default() -> Self {
        StrategySpec {
            kind: StrategyKind::GreedyInfo,
            costly_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta0Spec {
    Scalar(f64),
    Vector(Vec<f64>),
    /// Only `"prior"` is accepted: draw θ₀ from the prior per replicate.
    Named(String),
}

fn default_replicates() -> usize {
    1
}
fn default_max_trials() -> usize {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub theta0: Theta0Spec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Safety cap on the number of trials of a cost-budget run.
    #[serde(default = "default_max_trials")]
    pub max_trials: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    #[default]
    Uniform,
    /// Independent normal density per axis, truncated to the grid.
    Normal { mean: Vec<f64>, sd: Vec<f64> },
}

fn default_eps() -> f64 {
    0.15
}
fn default_tail() -> f64 {
    0.5
}
fn default_threshold() -> f64 {
    0.95
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_tail")]
    pub tail: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Radius of the window used for the local posterior summary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_radius: Option<f64>,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            eps: default_eps(),
            tail: default_tail(),
            threshold: default_threshold(),
            local_radius: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Explicit true parameters, one run each.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<Theta0Spec>>,
    /// Explicit seeds, one run each.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Number of runs with θ₀ drawn from the prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_draws: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fixed θ₀, or `None` when it is drawn from the prior.
    pub fn theta0(&self) -> Result<Option<Vec<f64>>> {
        theta0_value(&self.run.theta0, "run.theta0")
    }

    pub fn validate(&self) -> Result<()> {
        let v = |f: &str, r: &str| Error::validation(f, r);
        let dim = self.model.dim();
        let (lo, hi) = self.model.bounds();
        match &self.model {
            ModelSpec::Psychometric {
                lower,
                upper,
                grid,
                candidates,
                x_lower,
                x_upper,
            } => {
                if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                    return Err(v("model.lower", "bounds must be finite with lower < upper"));
                }
                if *grid < 2 {
                    return Err(v("model.grid", "needs at least 2 cells"));
                }
                if *candidates < 1 {
                    return Err(v("model.candidates", "needs at least 1 candidate"));
                }
                let xl = x_lower.unwrap_or(*lower);
                let xu = x_upper.unwrap_or(*upper);
                if !(xl <= xu) {
                    return Err(v("model.x_lower", "must not exceed x_upper"));
                }
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
                if *degree > 3 {
                    return Err(v(
                        "model.degree",
                        "at most 3 (grid cost grows as grid^(degree+1))",
                    ));
                }
                if !(*noise_sd > 0.0) {
                    return Err(v("model.noise_sd", "must be positive"));
                }
                if lower.len() != degree + 1 || upper.len() != degree + 1 {
                    return Err(Error::validation(
                        "model.lower",
                        format!("needs {} entries", degree + 1),
                    ));
                }
                if lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
                    return Err(v(
                        "model.lower",
                        "each lower bound must be below its upper bound",
                    ));
                }
                if *grid < 2 {
                    return Err(v("model.grid", "needs at least 2 cells"));
                }
                if grid
                    .checked_pow(dim as u32)
                    .is_none_or(|cells| cells > 4_000_000)
                {
                    return Err(v("model.grid", "too many grid cells"));
                }
                if *candidates < 1 {
                    return Err(v("model.candidates", "needs at least 1 candidate"));
                }
                if !(x_lower <= x_upper) {
                    return Err(v("model.x_lower", "must not exceed x_upper"));
                }
            }
            ModelSpec::TwentyQuestions { bits } => {
                if !(1..=24).contains(bits) {
                    return Err(v("model.bits", "must be in 1..=24"));
                }
                if !matches!(self.cost, CostSpec::PerChannel { .. }) {
                    return Err(v(
                        "cost.kind",
                        "twenty_questions requires kind = \"per_channel\"",
                    ));
                }
                if !matches!(
                    self.strategy.kind,
                    StrategyKind::GreedyInfo | StrategyKind::MyopicGainPerCost
                ) {
                    return Err(v(
                        "strategy.kind",
                        "twenty_questions supports greedy_info or myopic_gain_per_cost",
                    ));
                }
                if !matches!(self.prior, PriorSpec::Uniform) {
                    return Err(v("prior.kind", "twenty_questions uses a uniform prior"));
                }
            }
        }
        match &self.cost {
            CostSpec::Unit { jitter } => check_jitter(*jitter)?,
            CostSpec::Constant { value, jitter } => {
                if !(*value > 0.0 && value.is_finite()) {
                    return Err(v("cost.value", "must be positive and finite"));
                }
                check_jitter(*jitter)?;
            }
            CostSpec::OutcomeLinear {
                base,
                on_zero,
                jitter,
            } => {
                if !(*base > 0.0 && base + on_zero > 0.0 && (base + on_zero).is_finite()) {
                    return Err(v("cost.base", "costs for both outcomes must be positive"));
                }
                check_jitter(*jitter)?;
            }
            CostSpec::PerChannel { costs } => {
                if !matches!(self.model, ModelSpec::TwentyQuestions { .. }) {
                    return Err(v(
                        "cost.kind",
                        "per_channel costs require the twenty_questions model",
                    ));
                }
                if costs.is_empty() || costs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                    return Err(v("cost.costs", "needs one positive cost per channel"));
                }
            }
        }
        if let Some(k) = self.strategy.costly_every {
            if k == 0 {
                return Err(v("strategy.costly_every", "must be at least 1"));
            }
            if !matches!(self.model, ModelSpec::TwentyQuestions { .. }) {
                return Err(v(
                    "strategy.costly_every",
                    "only applies to twenty_questions",
                ));
            }
        }
        if let StrategyKind::FixedX { x } = self.strategy.kind {
            if !x.is_finite() {
                return Err(v("strategy.x", "must be finite"));
            }
        }
        match (self.run.trials, self.run.budget) {
            (Some(_), Some(_)) => {
                return Err(v("run.trials", "give either trials or budget, not both"))
            }
            (None, None) => return Err(v("run.trials", "one of trials or budget is required")),
            (Some(0), None) => return Err(v("run.trials", "must be at least 1")),
            (None, Some(b)) if !(b > 0.0 && b.is_finite()) => {
                return Err(v("run.budget", "must be positive and finite"))
            }
            _ => {}
        }
        if self.run.replicates == 0 {
            return Err(v("run.replicates", "must be at least 1"));
        }
        if self.run.max_trials == 0 {
            return Err(v("run.max_trials", "must be at least 1"));
        }
        if let Some(t) = self.theta0()? {
            check_theta(&t, dim, &lo, &hi, "run.theta0")?;
        }
        if let PriorSpec::Normal { mean, sd } = &self.prior {
            if mean.len() != dim || sd.len() != dim {
                return Err(Error::validation(
                    "prior.mean",
                    format!("needs {dim} entries"),
                ));
            }
            if sd.iter().any(|s| !(*s > 0.0)) {
                return Err(v("prior.sd", "must be positive"));
            }
        }
        let d = &self.diagnostics;
        if !(d.eps > 0.0) {
            return Err(v("diagnostics.eps", "must be positive"));
        }
        if !(d.tail > 0.0 && d.tail <= 1.0) {
            return Err(v("diagnostics.tail", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&d.threshold) {
            return Err(v("diagnostics.threshold", "must be in [0, 1]"));
        }
        if d.local_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(v("diagnostics.local_radius", "must be positive"));
        }
        if let Some(s) = &self.sweep {
            if let Some(list) = &s.theta0 {
                for t in list {
                    if let Some(t) = theta0_value(t, "sweep.theta0")? {
                        check_theta(&t, dim, &lo, &hi, "sweep.theta0")?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_jitter(j: f64) -> Result<()> {
    if !(0.0..1.0).contains(&j) {
        return Err(Error::validation("cost.jitter", "must lie in [0, 1)"));
    }
    Ok(())
}

fn check_theta(t: &[f64], dim: usize, lo: &[f64], hi: &[f64], field: &str) -> Result<()> {
    if t.len() != dim {
        return Err(Error::validation(
            field,
            format!("needs {dim} entries, got {}", t.len()),
        ));
    }
    for ((v, a), b) in t.iter().zip(lo).zip(hi) {
        if !(v >= a && v <= b) {
            return Err(Error::validation(
                field,
                format!("{v} lies outside the parameter bounds [{a}, {b}]"),
            ));
        }
    }
    Ok(())
}

pub(crate) fn theta0_value(spec: &Theta0Spec, field: &str) -> Result<Option<Vec<f64>>> {
    match spec {
        Theta0Spec::Scalar(v) => Ok(Some(vec![*v])),
        Theta0Spec::Vector(v) => Ok(Some(v.clone())),
        Theta0Spec::Named(s) if s == "prior" => Ok(None),
        Theta0Spec::Named(s) => Err(Error::validation(
            field,
            format!("expected a number, an array or \"prior\", got \"{s}\""),
        )),
    }
}
