use super::{ObservationModel, OutcomeSpace};

/// Finite-parameter model given by an explicit probability table: row `i`
/// holds `p(y = k | θ = thetas[i])` for outcomes `k = 0, 1, …`. The placement
/// is ignored. A parameter value is matched to the nearest listed θ.
#[derive(Clone, Debug)]
pub struct TableModel {
    thetas: Vec<f64>,
    rows: Vec<Vec<f64>>,
    outcomes: OutcomeSpace,
}

impl TableModel {
    pub fn new(thetas: Vec<f64>, rows: Vec<Vec<f64>>) -> Self {
        assert_eq!(thetas.len(), rows.len());
        let k = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == k));
        TableModel {
            thetas,
            rows,
            outcomes: OutcomeSpace::Finite((0..k).map(|v| v as f64).collect()),
        }
    }

    fn row(&self, theta: f64) -> &[f64] {
        let i = self
            .thetas
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - theta).abs().total_cmp(&(b.1 - theta).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        &self.rows[i]
    }
}

impl ObservationModel for TableModel {
    fn dim(&self) -> usize {
        1
    }

    fn outcome_space(&self) -> &OutcomeSpace {
        &self.outcomes
    }

    fn likelihood(&self, y: f64, theta: &[f64], _x: f64) -> f64 {
        self.row(theta[0]).get(y as usize).copied().unwrap_or(0.0)
    }

    fn derivative_bound(&self) -> f64 {
        0.0
    }
}
