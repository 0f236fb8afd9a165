//! Self-contained invariant suite run by `seqdesign verify`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::{
    cost_bounds_hold, rho, telescoping_error, AsymptoticReport, MostTrialsParams,
};
use crate::doptimal::{bundled_test_sets, solve_doptimal, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::harness::{parse_trace_csv, run_experiment, trace_csv_bytes, ExperimentConfig};
use crate::models::{
    expected_observed_information, LinearGaussianModel, ObservationModel, PsychometricModel,
    TableModel,
};
use crate::posterior::{Axis, GridPosterior, ParameterGrid};
use crate::strategies::{expected_information_gain, expected_information_gain_kl};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

fn check(name: &'static str, worst: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tol,
        detail: format!("worst deviation {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn flag(name: &'static str, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name,
        passed,
        detail: detail.into(),
    }
}

fn config(extra_model: &str, rest: &str) -> ExperimentConfig {
    let text = format!(
        "[model]\nkind = \"psychometric\"\ngrid = 512\ncandidates = 129\n{extra_model}\n{rest}"
    );
    ExperimentConfig::from_toml_str(&text).expect("built-in verification config is valid")
}

/// Runs every check. Deterministic; takes a few seconds.
pub fn run_verification() -> VerificationReport {
    let checks = vec![
        normalization(),
        mutual_information_forms(),
        rho_additivity(),
        information_identity(),
        telescoping_and_stopping(),
        determinism_and_round_trip(),
        cost_bounds(),
        doptimal_certificates(),
    ];
    VerificationReport { checks }
}

fn psychometric_grid(n: usize) -> Arc<ParameterGrid> {
    Arc::new(ParameterGrid::uniform(0.0, 100.0, n).expect("valid grid"))
}

fn lg_grid() -> Arc<ParameterGrid> {
    Arc::new(
        ParameterGrid::new(vec![Axis::new(-2.0, 2.0, 15), Axis::new(-2.0, 2.0, 15)])
            .expect("valid grid"),
    )
}

fn normalization() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let psy = PsychometricModel::default();
    let mut post = GridPosterior::uniform(psychometric_grid(512));
    for _ in 0..300 {
        let x = rng.random_range(0.0..100.0);
        let y = psy.sample(&[37.0], x, &mut rng);
        if post.update_in_place(&psy, x, y).is_err() {
            return flag(
                "posterior normalization",
                false,
                "unexpected impossible observation",
            );
        }
        worst = worst.max((post.weights().iter().sum::<f64>() - 1.0).abs());
    }
    let lg = LinearGaussianModel::polynomial(1, 0.5);
    let mut post = GridPosterior::uniform(lg_grid());
    for _ in 0..30 {
        let x = rng.random_range(-1.0..1.0);
        let y = lg.sample(&[0.3, -0.4], x, &mut rng);
        if post.update_in_place(&lg, x, y).is_err() {
            return flag(
                "posterior normalization",
                false,
                "unexpected impossible observation",
            );
        }
        worst = worst.max((post.weights().iter().sum::<f64>() - 1.0).abs());
    }
    check("posterior normalization", worst, 1e-12)
}

fn mutual_information_forms() -> CheckResult {
    let mut worst: f64 = 0.0;
    let psy = PsychometricModel::default();
    let grid = psychometric_grid(400);
    let posts = [
        GridPosterior::uniform(Arc::clone(&grid)),
        GridPosterior::from_log_density(Arc::clone(&grid), |t| {
            -0.5 * ((t[0] - 40.0) / 3.0).powi(2)
        })
        .expect("normalizable"),
        GridPosterior::from_log_density(Arc::clone(&grid), |t| {
            (0.7 * (-0.5 * ((t[0] - 20.0) / 2.0).powi(2)).exp()
                + 0.3 * (-0.5 * ((t[0] - 70.0) / 5.0).powi(2)).exp())
            .ln()
        })
        .expect("normalizable"),
    ];
    for post in &posts {
        for x in [5.0, 20.0, 40.0, 55.5, 70.0, 99.0] {
            let a = expected_information_gain(post, &psy, x);
            let b = expected_information_gain_kl(post, &psy, x);
            worst = worst.max((a - b).abs());
        }
    }
    let table = TableModel::new(
        vec![0.0, 1.0, 2.0],
        vec![
            vec![0.2, 0.3, 0.5],
            vec![0.6, 0.3, 0.1],
            vec![0.1, 0.8, 0.1],
        ],
    );
    let tgrid = Arc::new(ParameterGrid::new(vec![Axis::new(-0.5, 2.5, 3)]).expect("valid grid"));
    let tpost = GridPosterior::from_log_weights(tgrid, vec![0.1f64.ln(), 0.5f64.ln(), 0.4f64.ln()])
        .expect("normalizable");
    worst = worst.max(
        (expected_information_gain(&tpost, &table, 0.0)
            - expected_information_gain_kl(&tpost, &table, 0.0))
        .abs(),
    );
    let lg = LinearGaussianModel::polynomial(1, 0.7);
    let lpost = GridPosterior::from_log_density(lg_grid(), |t| {
        -0.5 * ((t[0] - 0.2).powi(2) + (t[1] + 0.3).powi(2) / 0.5)
    })
    .expect("normalizable");
    for x in [-1.0, 0.0, 0.8] {
        let a = expected_information_gain(&lpost, &lg, x);
        let b = expected_information_gain_kl(&lpost, &lg, x);
        worst = worst.max((a - b).abs());
    }
    check("mutual information: entropy form = KL form", worst, 1e-8)
}

fn rho_additivity() -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let preds: [fn(i64) -> bool; 3] = [
        |k| k.rem_euclid(3) == 0,
        |k| k > 0 && (k as u64).is_power_of_two(),
        |k| (k * k + 1) % 7 < 3,
    ];
    let mut worst: f64 = 0.0;
    for p in preds {
        for _ in 0..200 {
            let a = rng.random_range(-500i64..500);
            let b = a + rng.random_range(1i64..400);
            let c = b + rng.random_range(1i64..400);
            let (Ok(ac), Ok(ab), Ok(bc)) = (rho(p, a, c), rho(p, a, b), rho(p, b, c)) else {
                return flag(
                    "rho finite additivity",
                    false,
                    "rho rejected a valid window",
                );
            };
            let combined = ((b - a) as f64 * ab + (c - b) as f64 * bc) / (c - a) as f64;
            worst = worst.max((ac - combined).abs());
        }
    }
    check("rho finite additivity", worst, 1e-12)
}

fn information_identity() -> CheckResult {
    let psy = PsychometricModel::default();
    let lg = LinearGaussianModel::polynomial(1, 0.8);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        for j in 0..20 {
            let theta = 2.5 + 5.0 * i as f64;
            let x = 2.5 + 5.0 * j as f64;
            let d = expected_observed_information(&psy, &[theta], x) - psy.fisher(&[theta], x);
            worst = worst.max(d.amax());
            let th = [-1.0 + 0.1 * i as f64, 0.5 - 0.05 * j as f64];
            let xl = -1.0 + 0.1 * j as f64;
            let d = expected_observed_information(&lg, &th, xl) - lg.fisher(&th, xl);
            worst = worst.max(d.amax());
        }
    }
    check("expected observed information = Fisher", worst, 1e-6)
}

fn telescoping_and_stopping() -> CheckResult {
    let trials = config("", "[run]\ntheta0 = 50.0\ntrials = 400\nseed = 3\n");
    let budget = config(
        "",
        "[cost]\nkind = \"outcome_linear\"\nbase = 1.0\non_zero = 3.0\n[strategy]\nkind = \"myopic_gain_per_cost\"\n[run]\ntheta0 = 30.0\nbudget = 300.0\nseed = 4\n",
    );
    let (Ok(a), Ok(b)) = (run_experiment(&trials), run_experiment(&budget)) else {
        return flag("telescoping gains and stopping rules", false, "run failed");
    };
    let ra = &a.replicates[0];
    let rb = &b.replicates[0];
    let tele = telescoping_error(&ra.trace).max(telescoping_error(&rb.trace));
    let n = rb.rows.len();
    let stop_ok = ra.rows.len() == 400
        && n >= 2
        && rb.rows[n - 2].cum_cost <= 300.0
        && rb.rows[n - 1].cum_cost > 300.0
        && rb.summary.budget_overrun;
    flag(
        "telescoping gains and stopping rules",
        tele <= 1e-8 && stop_ok,
        format!("telescoping error {tele:.3e}, stopping rules hold: {stop_ok}"),
    )
}

fn determinism_and_round_trip() -> CheckResult {
    let cfg = config(
        "",
        "[strategy]\nkind = \"random_uniform\"\n[run]\ntheta0 = 60.0\ntrials = 300\nreplicates = 2\nseed = 9\n",
    );
    let (Ok(a), Ok(b)) = (run_experiment(&cfg), run_experiment(&cfg)) else {
        return flag("determinism and CSV round-trip", false, "run failed");
    };
    let mut identical = a.summary == b.summary;
    let mut round_trip = true;
    for (ra, rb) in a.replicates.iter().zip(&b.replicates) {
        let (Ok(ba), Ok(bb)) = (trace_csv_bytes(&ra.rows), trace_csv_bytes(&rb.rows)) else {
            return flag(
                "determinism and CSV round-trip",
                false,
                "CSV rendering failed",
            );
        };
        identical &= ba == bb;
        let params = MostTrialsParams::default();
        let reread =
            parse_trace_csv(&ba).and_then(|rows| AsymptoticReport::from_rows(&rows, 1, params));
        let direct = AsymptoticReport::from_rows(&ra.rows, 1, params);
        round_trip &= matches!((reread, direct), (Ok(x), Ok(y)) if x == y);
    }
    flag(
        "determinism and CSV round-trip",
        identical && round_trip,
        format!("bit-identical reruns: {identical}, re-read diagnostics identical: {round_trip}"),
    )
}

fn cost_bounds() -> CheckResult {
    let cfg = config(
        "",
        "[cost]\nkind = \"outcome_linear\"\nbase = 1.0\non_zero = 3.0\njitter = 0.25\n[strategy]\nkind = \"myopic_gain_per_cost\"\n[run]\ntheta0 = 70.0\ntrials = 400\nreplicates = 3\nseed = 5\n",
    );
    let Ok(run) = run_experiment(&cfg) else {
        return flag("cost bounds γt ≤ C_t ≤ Mt", false, "run failed");
    };
    // sampled costs lie in [0.75, 5]
    let (gamma, max) = (0.75 * (1.0 - 1e-9), 5.0);
    let ok = run
        .replicates
        .iter()
        .all(|r| cost_bounds_hold(&r.trace, gamma, max) && r.trace.validate(max).is_ok());
    flag(
        "cost bounds γt ≤ C_t ≤ Mt",
        ok,
        format!("γ = {gamma}, M = {max}"),
    )
}

fn doptimal_certificates() -> CheckResult {
    let mut worst: f64 = 0.0;
    for (_, set) in bundled_test_sets() {
        match solve_doptimal(&set, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Ok(d) if d.converged => worst = worst.max(d.gap),
            _ => {
                return flag(
                    "D-optimal gap certificates",
                    false,
                    "solver did not converge",
                )
            }
        }
    }
    check("D-optimal gap certificates", worst, 1e-8)
}
