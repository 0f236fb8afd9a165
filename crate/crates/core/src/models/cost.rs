use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};

use super::ObservationModel;
use crate::error::{Error, Result};

type CostFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Mean cost of an observation given its outcome and placement.
#[derive(Clone)]
pub enum CostKind {
    Constant(f64),
    /// `base + on_zero·[y = 0]`.
    OutcomeLinear {
        base: f64,
        on_zero: f64,
    },
    /// Arbitrary `E(C | y, x)` with declared bounds.
    Custom {
        label: String,
        mean: CostFn,
        lower: f64,
        upper: f64,
    },
}

impl fmt::Debug for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostKind::Constant(c) => write!(f, "Constant({c})"),
            CostKind::OutcomeLinear { base, on_zero } => {
                write!(f, "OutcomeLinear {{ base: {base}, on_zero: {on_zero} }}")
            }
            CostKind::Custom {
                label,
                lower,
                upper,
                ..
            } => write!(f, "Custom({label}, [{lower}, {upper}])"),
        }
    }
}

/// Distribution of the cost `C_x` of observing `Y_x`.
///
/// The cost depends on the parameter only through the outcome: sampling sees
/// `(y, x)` and nothing else. With `jitter = j > 0` a sampled cost is the
/// conditional mean times a uniform factor on `[1 - j, 1 + j]`.
#[derive(Clone, Debug)]
pub struct CostModel {
    kind: CostKind,
    jitter: f64,
}

impl CostModel {
    pub fn constant(c: f64) -> Self {
        CostModel {
            kind: CostKind::Constant(c),
            jitter: 0.0,
        }
    }

    pub fn unit() -> Self {
        Self::constant(1.0)
    }

    pub fn outcome_linear(base: f64, on_zero: f64) -> Self {
        CostModel {
            kind: CostKind::OutcomeLinear { base, on_zero },
            jitter: 0.0,
        }
    }

    pub fn custom(
        label: impl Into<String>,
        lower: f64,
        upper: f64,
        mean: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CostModel {
            kind: CostKind::Custom {
                label: label.into(),
                mean: Arc::new(mean),
                lower,
                upper,
            },
            jitter: 0.0,
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&jitter) {
            return Err(Error::parameter("jitter", "must lie in [0, 1)"));
        }
        self.jitter = jitter;
        Ok(self)
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, CostKind::Constant(_))
    }

    /// `E(C | y, x)`.
    pub fn conditional_mean(&self, y: f64, x: f64) -> f64 {
        match &self.kind {
            CostKind::Constant(c) => *c,
            CostKind::OutcomeLinear { base, on_zero } => {
                if y == 0.0 {
                    base + on_zero
                } else {
                    *base
                }
            }
            CostKind::Custom { mean, .. } => mean(y, x),
        }
    }

    pub fn sample(&self, y: f64, x: f64, rng: &mut dyn RngCore) -> f64 {
        let m = self.conditional_mean(y, x);
        if self.jitter > 0.0 {
            let u: f64 = rng.random();
            m * (1.0 + self.jitter * (2.0 * u - 1.0))
        } else {
            m
        }
    }

    /// Bounds `(γ′, M)` on the mean cost, widened by the jitter for samples.
    pub fn bounds(&self) -> (f64, f64) {
        let (lo, hi) = match &self.kind {
            CostKind::Constant(c) => (*c, *c),
            CostKind::OutcomeLinear { base, on_zero } => {
                (base.min(base + on_zero), base.max(base + on_zero))
            }
            CostKind::Custom { lower, upper, .. } => (*lower, *upper),
        };
        (lo * (1.0 - self.jitter), hi * (1.0 + self.jitter))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(lo > 0.0 && hi.is_finite() && hi >= lo) {
            return Err(Error::parameter(
                "cost",
                format!("cost bounds [{lo}, {hi}] must be positive and finite"),
            ));
        }
        Ok(())
    }

    /// Expected cost over weighted outcome nodes `(y, p)`.
    pub fn expected_over(&self, nodes: impl IntoIterator<Item = (f64, f64)>, x: f64) -> f64 {
        if let CostKind::Constant(c) = self.kind {
            return c;
        }
        nodes
            .into_iter()
            .map(|(y, w)| w * self.conditional_mean(y, x))
            .sum()
    }
}

/// `E(C_x | θ) = Σ_y p(y | θ, x)·E(C | y, x)`.
pub fn expected_cost_at(
    cost: &CostModel,
    model: &dyn ObservationModel,
    x: f64,
    theta: &[f64],
) -> Result<f64> {
    let e = cost.expected_over(model.outcome_nodes(theta, x), x);
    let (_, hi) = cost.bounds();
    if !(e > 0.0 && e <= hi * (1.0 + 1e-12)) {
        return Err(Error::ModelViolation(format!(
            "expected cost {e} at x={x} outside (0, {hi}]"
        )));
    }
    Ok(e)
}
