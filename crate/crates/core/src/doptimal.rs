//! D-optimal reference designs.
//!
//! Maximizes `log det Σ_j w_j M_j` over the probability simplex, where `M_j`
//! is the Fisher information of candidate `j` at the true parameter (divided
//! by its expected cost in per-cost mode). The solver is Frank–Wolfe with
//! away steps and exact line search; the returned certificate is the
//! Kiefer–Wolfowitz gap `max_j tr(B⁻¹ M_j) - n`, which is zero exactly at the
//! optimum.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, inverse_spd, is_psd, log_det_spd};
use crate::models::{expected_cost_at, CostModel, ObservationModel};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    UnitCost,
    PerCost,
}

#[derive(Clone, Debug)]
pub struct CandidateInformationSet {
    placements: Vec<f64>,
    info: Vec<DMatrix<f64>>,
    costs: Vec<f64>,
    normalization: Normalization,
}

impl CandidateInformationSet {
    pub fn new(
        placements: Vec<f64>,
        info: Vec<DMatrix<f64>>,
        costs: Vec<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        if info.is_empty() {
            return Err(Error::parameter(
                "candidates",
                "no candidate information matrices",
            ));
        }
        if placements.len() != info.len() || costs.len() != info.len() {
            return Err(Error::parameter("candidates", "length mismatch"));
        }
        let n = info[0].nrows();
        for (j, m) in info.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::parameter(
                    "candidates",
                    format!("matrix {j} is not {n}×{n}"),
                ));
            }
            if !is_psd(m, 1e-10) {
                return Err(Error::parameter(
                    "candidates",
                    format!("matrix {j} is not PSD"),
                ));
            }
        }
        if costs.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::parameter("costs", "expected costs must be positive"));
        }
        Ok(CandidateInformationSet {
            placements,
            info,
            costs,
            normalization,
        })
    }

    /// Unit-cost set from bare matrices; placements are the indices.
    pub fn from_matrices(info: Vec<DMatrix<f64>>) -> Result<Self> {
        let m = info.len();
        Self::new(
            (0..m).map(|j| j as f64).collect(),
            info,
            vec![1.0; m],
            Normalization::UnitCost,
        )
    }

    /// Fisher matrices `I_x(θ₀)` and expected costs `E(C_x | θ₀)` for each
    /// candidate placement.
    pub fn from_model(
        model: &dyn ObservationModel,
        theta0: &[f64],
        placements: &[f64],
        cost: &CostModel,
        normalization: Normalization,
    ) -> Result<Self> {
        let mut info = Vec::with_capacity(placements.len());
        let mut costs = Vec::with_capacity(placements.len());
        for &x in placements {
            info.push(model.fisher(theta0, x));
            costs.push(expected_cost_at(cost, model, x, theta0)?);
        }
        Self::new(placements.to_vec(), info, costs, normalization)
    }

    pub fn len(&self) -> usize {
        self.info.len()
    }

    pub fn is_empty(&self) -> bool {
        self.info.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.info[0].nrows()
    }

    pub fn placements(&self) -> &[f64] {
        &self.placements
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Matrix entering the optimization for candidate `j`.
    pub fn effective(&self, j: usize) -> DMatrix<f64> {
        match self.normalization {
            Normalization::UnitCost => self.info[j].clone(),
            Normalization::PerCost => &self.info[j] / self.costs[j],
        }
    }

    fn push(&mut self, x: f64, info: DMatrix<f64>, cost: f64) {
        self.placements.push(x);
        self.info.push(info);
        self.costs.push(cost);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignWeights {
    pub normalization: Normalization,
    pub placements: Vec<f64>,
    pub weights: Vec<f64>,
    /// Optimal averaged information matrix, row-major nested.
    pub b_star: Vec<Vec<f64>>,
    pub log_det: f64,
    pub det: f64,
    pub h_star_nats: f64,
    /// Kiefer–Wolfowitz gap `max_j tr(B⁻¹ M_j) - n` at the returned weights.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DesignWeights {
    pub fn b_star_matrix(&self) -> DMatrix<f64> {
        let n = self.b_star.len();
        DMatrix::from_fn(n, n, |i, j| self.b_star[i][j])
    }

    /// Placements with weight above `min_weight`.
    pub fn support(&self, min_weight: f64) -> Vec<(f64, f64)> {
        self.placements
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w > min_weight)
            .map(|(x, w)| (*x, *w))
            .collect()
    }
}

/// `H* = -½ log det B + (n/2) log(2πe)`.
pub fn h_star(b_star: &DMatrix<f64>) -> Result<f64> {
    let ld = log_det_spd(b_star);
    if !ld.is_finite() {
        return Err(Error::parameter(
            "b_star",
            "matrix is not positive definite",
        ));
    }
    Ok(h_star_from_log_det(ld, b_star.nrows()))
}

pub fn h_star_from_log_det(log_det: f64, n: usize) -> f64 {
    -0.5 * log_det + 0.5 * n as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
}

fn combine(mats: &[DMatrix<f64>], w: &[f64]) -> DMatrix<f64> {
    let n = mats[0].nrows();
    let mut b = DMatrix::zeros(n, n);
    for (m, &wj) in mats.iter().zip(w) {
        if wj != 0.0 {
            b += wj * m;
        }
    }
    b
}

/// Step size maximizing `log det(B + γD)` on `[0, max_step]`.
fn line_search(b: &DMatrix<f64>, d: &DMatrix<f64>, max_step: f64) -> f64 {
    let slope = |g: f64| -> Option<(f64, f64)> {
        let m = b + g * d;
        let inv = inverse_spd(&m)?;
        let md = &inv * d;
        Some((md.trace(), -(&md * &md).trace()))
    };
    match slope(max_step) {
        Some((s, _)) if s >= 0.0 => return max_step,
        _ => {}
    }
    let (mut lo, mut hi) = (0.0, max_step);
    let mut g = 0.5 * max_step;
    for _ in 0..200 {
        let Some((s, curv)) = slope(g) else {
            hi = g;
            g = 0.5 * (lo + hi);
            continue;
        };
        if s > 0.0 {
            lo = g;
        } else {
            hi = g;
        }
        let newton = g - s / curv;
        g = if curv < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-16 * max_step.max(1.0) || s.abs() < 1e-15 {
            break;
        }
    }
    g.clamp(0.0, max_step)
}

/// Maximizes `log det` of the averaged (cost-normalized) information over the
/// simplex. Exceeding `max_iter` returns the current iterate with
/// `converged = false`.
pub fn solve_doptimal(
    set: &CandidateInformationSet,
    tol: f64,
    max_iter: usize,
) -> Result<DesignWeights> {
    if !(tol > 0.0) {
        return Err(Error::parameter("tol", "must be positive"));
    }
    let mats: Vec<DMatrix<f64>> = (0..set.len()).map(|j| set.effective(j)).collect();
    let n = set.dim() as f64;
    let m = mats.len();
    let mut w = vec![1.0 / m as f64; m];
    let mut b = combine(&mats, &w);
    // A convex combination is positive definite iff the uniform one is.
    if inverse_spd(&b).is_none() {
        return Err(Error::DegenerateDesign(
            "no convex combination of candidates is positive definite".into(),
        ));
    }
    let mut iterations = 0;
    let mut converged = false;
    let mut gap;
    loop {
        let inv = inverse_spd(&b)
            .ok_or_else(|| Error::DegenerateDesign("iterate lost positive definiteness".into()))?;
        let d: Vec<f64> = mats.iter().map(|mj| frobenius(&inv, mj)).collect();
        let (s, ds) =
            d.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc },
            );
        gap = ds - n;
        if gap <= tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;
        let away = d.iter().enumerate().filter(|(j, _)| w[*j] > 0.0).fold(
            (usize::MAX, f64::INFINITY),
            |acc, (j, &v)| if v < acc.1 { (j, v) } else { acc },
        );
        let use_away = away.0 != usize::MAX && w[away.0] < 1.0 && (n - away.1) > (ds - n);
        if use_away {
            let a = away.0;
            let max_step = w[a] / (1.0 - w[a]);
            let dir = &b - &mats[a];
            let g = line_search(&b, &dir, max_step);
            for wj in w.iter_mut() {
                *wj *= 1.0 + g;
            }
            w[a] -= g;
            if g >= max_step {
                w[a] = 0.0;
            }
        } else {
            let dir = &mats[s] - &b;
            let g = line_search(&b, &dir, 1.0);
            for wj in w.iter_mut() {
                *wj *= 1.0 - g;
            }
            w[s] += g;
        }
        for wj in w.iter_mut() {
            if *wj < 0.0 {
                *wj = 0.0;
            }
        }
        let total: f64 = w.iter().sum();
        for wj in w.iter_mut() {
            *wj /= total;
        }
        b = combine(&mats, &w);
    }
    let log_det = log_det_spd(&b);
    let nn = b.nrows();
    Ok(DesignWeights {
        normalization: set.normalization(),
        placements: set.placements().to_vec(),
        weights: w,
        b_star: (0..nn)
            .map(|i| (0..nn).map(|j| b[(i, j)]).collect())
            .collect(),
        log_det,
        det: log_det.exp(),
        h_star_nats: h_star_from_log_det(log_det, nn),
        gap,
        iterations,
        converged,
    })
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Newton steps on central differences from `x`. Golden section alone only
/// pins a smooth maximum to about `sqrt(ε)`; the derivative's root is much
/// sharper.
fn newton_polish(f: impl Fn(f64) -> f64, mut x: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..6 {
        let h = 1e-5 * x.abs().max(1.0);
        let (fm, f0, fp) = (f(x - h), f(x), f(x + h));
        let g = (fp - fm) / (2.0 * h);
        let g2 = (fp - 2.0 * f0 + fm) / (h * h);
        if !(g2 < 0.0) {
            break;
        }
        let next = x - g / g2;
        if !(lo..=hi).contains(&next) || f(next) < f0 - 1e-15 * f0.abs() {
            break;
        }
        let moved = (next - x).abs();
        x = next;
        if moved <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Solves on a scalar candidate grid, then repeatedly polishes the support
/// points (and the current steepest candidate) by golden-section search of
/// `tr(B⁻¹ M(x))` within one grid step, adding the polished placements as new
/// candidates. This closes most of the gap between the grid optimum and the
/// optimum over the whole placement interval.
#[allow(clippy::too_many_arguments)]
pub fn solve_doptimal_refined(
    model: &dyn ObservationModel,
    theta0: &[f64],
    placements: &[f64],
    bounds: (f64, f64),
    cost: &CostModel,
    normalization: Normalization,
    tol: f64,
    max_iter: usize,
) -> Result<DesignWeights> {
    let mut set =
        CandidateInformationSet::from_model(model, theta0, placements, cost, normalization)?;
    let mut design = solve_doptimal(&set, tol, max_iter)?;
    let mut sorted = placements.to_vec();
    sorted.sort_by(f64::total_cmp);
    let step = sorted
        .windows(2)
        .map(|p| p[1] - p[0])
        .fold(0.0, f64::max)
        .max((bounds.1 - bounds.0) * 1e-3);
    let effective = |x: f64| -> Result<DMatrix<f64>> {
        let info = model.fisher(theta0, x);
        Ok(match normalization {
            Normalization::UnitCost => info,
            Normalization::PerCost => info / expected_cost_at(cost, model, x, theta0)?,
        })
    };
    for _round in 0..8 {
        let inv = match inverse_spd(&design.b_star_matrix()) {
            Some(inv) => inv,
            None => break,
        };
        let d = |x: f64| {
            effective(x)
                .map(|m| frobenius(&inv, &m))
                .unwrap_or(f64::NEG_INFINITY)
        };
        let mut seeds: Vec<f64> = design.support(1e-9).into_iter().map(|(x, _)| x).collect();
        let best_existing = (0..set.len())
            .map(|j| frobenius(&inv, &set.effective(j)))
            .fold(f64::NEG_INFINITY, f64::max);
        if let Some(j) = (0..set.len()).max_by(|&a, &b| {
            frobenius(&inv, &set.effective(a)).total_cmp(&frobenius(&inv, &set.effective(b)))
        }) {
            seeds.push(set.placements()[j]);
        }
        let mut added = false;
        for x0 in seeds {
            let lo = (x0 - step).max(bounds.0);
            let hi = (x0 + step).min(bounds.1);
            let x = newton_polish(d, golden_max(d, lo, hi), lo, hi);
            if d(x) > best_existing + 1e-14
                && !set.placements().iter().any(|p| (p - x).abs() < 1e-12)
            {
                let info = model.fisher(theta0, x);
                let c = expected_cost_at(cost, model, x, theta0)?;
                set.push(x, info, c);
                added = true;
            }
        }
        if !added {
            break;
        }
        design = solve_doptimal(&set, tol, max_iter)?;
    }
    Ok(design)
}

/// Fixed design used for the offline comparison.
#[derive(Clone, Debug)]
pub enum OfflineDesign<'a> {
    Weights(&'a DesignWeights),
    /// Placements spread uniformly over an interval, integrated by composite
    /// Simpson quadrature.
    UniformInterval {
        lower: f64,
        upper: f64,
    },
}

/// Averaged Fisher information `Σ w_j I_{x_j}(θ₀)` (or its continuous
/// uniform analogue) under a fixed design.
pub fn offline_reference(
    model: &dyn ObservationModel,
    theta0: &[f64],
    design: OfflineDesign<'_>,
) -> DMatrix<f64> {
    let n = model.dim();
    match design {
        OfflineDesign::Weights(dw) => {
            let mut acc = DMatrix::zeros(n, n);
            for (x, w) in dw.placements.iter().zip(&dw.weights) {
                if *w > 0.0 {
                    acc += *w * model.fisher(theta0, *x);
                }
            }
            acc
        }
        OfflineDesign::UniformInterval { lower, upper } => {
            let intervals = 20_000;
            let h = (upper - lower) / intervals as f64;
            let mut acc = DMatrix::zeros(n, n);
            for k in 0..=intervals {
                let coef = if k == 0 || k == intervals {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += coef * model.fisher(theta0, lower + k as f64 * h);
            }
            acc * (h / 3.0) / (upper - lower)
        }
    }
}

/// Information per unit expected cost of a fixed design at `theta0`. Unit-cost
/// weights are trial fractions, giving `Σ w_j I_j / Σ w_j c_j`; per-cost
/// weights are cost fractions, giving `Σ λ_j I_j / c_j`.
pub fn per_cost_information(
    model: &dyn ObservationModel,
    theta0: &[f64],
    design: &DesignWeights,
    cost: &CostModel,
) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let mut info = DMatrix::zeros(n, n);
    let mut spent = 0.0;
    for (&x, &w) in design.placements.iter().zip(&design.weights) {
        if w <= 0.0 {
            continue;
        }
        let c = expected_cost_at(cost, model, x, theta0)?;
        match design.normalization {
            Normalization::UnitCost => {
                info += w * model.fisher(theta0, x);
                spent += w * c;
            }
            Normalization::PerCost => info += (w / c) * model.fisher(theta0, x),
        }
    }
    Ok(match design.normalization {
        Normalization::UnitCost => info / spent,
        Normalization::PerCost => info,
    })
}

/// Small candidate sets (≤ 4 candidates, n ≤ 2) kept as solver regression
/// fixtures.
pub fn bundled_test_sets() -> Vec<(&'static str, CandidateInformationSet)> {
    let outer = |v: [f64; 2]| {
        DMatrix::from_row_slice(2, 2, &[v[0] * v[0], v[0] * v[1], v[1] * v[0], v[1] * v[1]])
    };
    let scalar = |v: f64| DMatrix::from_element(1, 1, v);
    let psy = crate::models::PsychometricModel::default();
    let mut sets = vec![
        (
            "features-axis-diagonal",
            CandidateInformationSet::from_matrices(vec![
                outer([1.0, 0.0]),
                outer([0.0, 1.0]),
                outer([1.0, 1.0]),
            ])
            .expect("valid fixture"),
        ),
        (
            "line-fit-four-points",
            CandidateInformationSet::from_matrices(
                [-1.0, -0.3, 0.5, 1.0]
                    .iter()
                    .map(|&x| outer([1.0, x]))
                    .collect(),
            )
            .expect("valid fixture"),
        ),
        (
            "per-cost-four-directions",
            CandidateInformationSet::new(
                vec![0.0, 1.0, 2.0, 3.0],
                vec![
                    outer([1.0, 0.0]),
                    outer([0.0, 1.0]),
                    outer([1.0, 1.0]),
                    outer([1.0, -1.0]),
                ],
                vec![1.0, 2.0, 1.5, 3.0],
                Normalization::PerCost,
            )
            .expect("valid fixture"),
        ),
        (
            "full-rank-mix",
            CandidateInformationSet::from_matrices(vec![
                DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]),
                DMatrix::from_row_slice(2, 2, &[0.4, -0.2, -0.2, 1.5]),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]),
            ])
            .expect("valid fixture"),
        ),
    ];
    sets.push((
        "psychometric-three",
        CandidateInformationSet::from_matrices(
            [48.0, 50.0, 53.0]
                .iter()
                .map(|&x| psy.fisher(&[50.0], x))
                .collect(),
        )
        .expect("valid fixture"),
    ));
    sets.push((
        "scalar-per-cost",
        CandidateInformationSet::new(
            vec![0.0, 1.0, 2.0],
            vec![scalar(0.25), scalar(0.2), scalar(0.1)],
            vec![2.5, 1.5, 1.2],
            Normalization::PerCost,
        )
        .expect("valid fixture"),
    ));
    sets
}
