use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seqdesign_core::diagnostics::{
    rho, telescoping_error, track_b, Clock, TrialRecord, TrialTrace,
};
use seqdesign_core::doptimal::{h_star_from_log_det, DEFAULT_MAX_ITER, DEFAULT_TOL};
use seqdesign_core::harness::{parse_trace_csv, run_experiment, trace_csv_bytes};
use seqdesign_core::linalg::{inverse_spd, log_det_spd};
use seqdesign_core::models::{
    expected_cost_at, numeric_neg_hessian, numeric_score, TwentyQuestionsModel,
};
use seqdesign_core::strategies::{
    choose_baseline, choose_greedy, choose_myopic_cost_aware, expected_information_gain,
    expected_information_gain_kl, sweep_order,
};
use seqdesign_core::{
    solve_doptimal, CandidateInformationSet, CandidateSet, CostModel, ExperimentConfig,
    GridPosterior, LinearGaussianModel, Normalization, ObservationModel, ParameterGrid,
    PsychometricModel, StrategyKind, TableModel,
};

fn grid(lower: f64, upper: f64, n: usize) -> Arc<ParameterGrid> {
    Arc::new(ParameterGrid::uniform(lower, upper, n).unwrap())
}

fn posterior_from(weights: &[f64], lower: f64, upper: f64) -> GridPosterior {
    let g = grid(lower, upper, weights.len());
    GridPosterior::from_log_weights(g, weights.iter().map(|w| w.ln()).collect()).unwrap()
}

fn mass(post: &GridPosterior) -> f64 {
    post.weights().iter().sum()
}

fn observations() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..100.0f64, prop::bool::ANY), 1..25)
        .prop_map(|v| v.into_iter().map(|(x, y)| (x, y as u8 as f64)).collect())
}

fn psd2() -> impl Strategy<Value = DMatrix<f64>> {
    (-2.0..2.0f64, -2.0..2.0f64, 0.0..1.0f64).prop_map(|(a, b, s)| {
        let v = DMatrix::from_row_slice(2, 1, &[a, b]);
        &v * v.transpose() + DMatrix::identity(2, 2) * (0.05 * s)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn updates_stay_normalized(obs in observations()) {
        let model = PsychometricModel::default();
        let mut post = GridPosterior::uniform(grid(0.0, 100.0, 256));
        for (x, y) in obs {
            post.update_in_place(&model, x, y).unwrap();
            prop_assert!((mass(&post) - 1.0).abs() < 1e-12);
            prop_assert!(post.log_weights().iter().all(|l| !l.is_nan()));
        }
    }

    #[test]
    fn update_order_does_not_matter(obs in observations(), seed in any::<u64>()) {
        let model = PsychometricModel::default();
        let prior = GridPosterior::uniform(grid(0.0, 100.0, 200));
        let mut forward = prior.clone();
        for &(x, y) in &obs {
            forward.update_in_place(&model, x, y).unwrap();
        }
        let mut shuffled = obs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let mut other = prior;
        for &(x, y) in &shuffled {
            other.update_in_place(&model, x, y).unwrap();
        }
        for (a, b) in forward.weights().iter().zip(other.weights()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn entropy_at_most_log_volume(ws in prop::collection::vec(1e-6..1.0f64, 2..60)) {
        let post = posterior_from(&ws, -3.0, 7.0);
        prop_assert!(post.differential_entropy() <= 10f64.ln() + 1e-9);
    }

    #[test]
    fn wide_local_summary_is_the_full_summary(
        ws in prop::collection::vec(1e-6..1.0f64, 2..60),
        c in -3.0..7.0f64,
    ) {
        let post = posterior_from(&ws, -3.0, 7.0);
        let local = post.local_summary(&[c], post.grid().diameter()).unwrap();
        prop_assert_eq!(local.summary, post.summarize());
    }

    #[test]
    fn summary_moments_are_sane(ws in prop::collection::vec(1e-6..1.0f64, 3..15)) {
        let n = ws.len();
        let axes = vec![
            seqdesign_core::Axis::new(-1.0, 1.0, n),
            seqdesign_core::Axis::new(0.0, 3.0, 4),
        ];
        let g = Arc::new(ParameterGrid::new(axes).unwrap());
        let lw = (0..g.len()).map(|i| (ws[i % n] * (1.0 + (i / n) as f64)).ln()).collect();
        let post = GridPosterior::from_log_weights(g.clone(), lw).unwrap();
        let s = post.summarize();
        let cov = s.covariance_matrix();
        prop_assert!((&cov - cov.transpose()).amax() < 1e-12);
        prop_assert!(cov.clone().symmetric_eigen().eigenvalues.iter().all(|e| *e >= -1e-12));
        prop_assert!(g.contains(&s.mean));
    }

    #[test]
    fn outcome_probabilities_sum_to_one(theta in 0.0..100.0f64, x in 0.0..100.0f64) {
        let model = PsychometricModel::default();
        let mut p = [0.0; 2];
        model.outcome_probabilities(&[theta], x, &mut p);
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-10);
        let lg = LinearGaussianModel::polynomial(2, 0.4);
        let total: f64 = lg.outcome_nodes(&[0.1, theta / 100.0, -0.2], x / 100.0).iter().map(|n| n.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn psychometric_derivatives(theta in 0.0..100.0f64, x in 0.0..100.0f64) {
        let model = PsychometricModel::default();
        let f = model.fisher(&[theta], x)[(0, 0)];
        prop_assert!(f > 0.0 && f <= 0.25);
        let u = theta - x;
        let closed = u.exp() / (1.0 + u.exp()).powi(2);
        if closed.is_finite() {
            prop_assert!((f - closed).abs() <= 1e-12 * closed.max(1e-300) + 1e-300);
        }
        prop_assert_eq!(model.neg_hessian(0.0, &[theta], x), model.neg_hessian(1.0, &[theta], x));
        let mut score_mean = 0.0;
        let mut p = [0.0; 2];
        model.outcome_probabilities(&[theta], x, &mut p);
        for (k, y) in [0.0, 1.0].into_iter().enumerate() {
            score_mean += p[k] * model.score(y, &[theta], x)[0];
            let fd_s = numeric_score(&model, y, &[theta], x, 1e-4)[0];
            let fd_h = numeric_neg_hessian(&model, y, &[theta], x, 1e-4)[(0, 0)];
            prop_assert!((model.score(y, &[theta], x)[0] - fd_s).abs() < 1e-5);
            prop_assert!((model.neg_hessian(y, &[theta], x)[(0, 0)] - fd_h).abs() < 1e-5);
            prop_assert!(model.score(y, &[theta], x)[0].abs() <= model.derivative_bound());
        }
        prop_assert!(score_mean.abs() < 1e-8);
    }

    #[test]
    fn linear_gaussian_fisher_is_theta_free(
        a in -2.0..2.0f64, b in -2.0..2.0f64, x in -1.0..1.0f64,
    ) {
        let model = LinearGaussianModel::polynomial(1, 0.5);
        let phi = model.features(x);
        let expect = &phi * phi.transpose() / 0.25;
        prop_assert!((model.fisher(&[a, b], x) - &expect).amax() < 1e-9);
        let mean_score: f64 = model
            .outcome_nodes(&[a, b], x)
            .iter()
            .map(|&(y, w)| w * model.score(y, &[a, b], x)[1])
            .sum();
        prop_assert!(mean_score.abs() < 1e-8);
    }

    #[test]
    fn gain_forms_agree_and_are_nonnegative(
        ws in prop::collection::vec(1e-4..1.0f64, 2..40),
        x in 20.0..80.0f64,
    ) {
        let post = posterior_from(&ws, 30.0, 70.0);
        let model = PsychometricModel::default();
        let h = expected_information_gain(&post, &model, x);
        let kl = expected_information_gain_kl(&post, &model, x);
        prop_assert!(h >= -1e-12);
        prop_assert!((h - kl).abs() < 1e-10, "{} vs {}", h, kl);
    }

    #[test]
    fn gain_forms_agree_on_table_models(
        rows in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 3), 2..8),
        ws in prop::collection::vec(1e-3..1.0f64, 8),
    ) {
        let k = rows.len();
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let thetas: Vec<f64> = (0..k).map(|i| i as f64 + 0.5).collect();
        let model = TableModel::new(thetas, rows);
        let post = posterior_from(&ws[..k], 0.0, k as f64);
        let h = expected_information_gain(&post, &model, 0.0);
        let kl = expected_information_gain_kl(&post, &model, 0.0);
        prop_assert!(h >= -1e-12);
        prop_assert!((h - kl).abs() < 1e-10);
    }

    #[test]
    fn myopic_choice_ignores_cost_scale(
        ws in prop::collection::vec(1e-4..1.0f64, 2..40),
        scale in 0.01..100.0f64,
    ) {
        let post = posterior_from(&ws, 30.0, 70.0);
        let model = PsychometricModel::default();
        let cands = CandidateSet::linspace(20.0, 80.0, 61).unwrap();
        let base = choose_myopic_cost_aware(&post, &model, &CostModel::outcome_linear(1.0, 3.0), &cands).unwrap();
        let scaled = choose_myopic_cost_aware(
            &post,
            &model,
            &CostModel::outcome_linear(scale, 3.0 * scale),
            &cands,
        )
        .unwrap();
        prop_assert_eq!(base.x, scaled.x);
        prop_assert!(base.objective <= base.sup_objective + 1e-12);
        prop_assert!(base.efficiency_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn greedy_beats_every_baseline(
        ws in prop::collection::vec(1e-4..1.0f64, 2..40),
        t in 0usize..100,
        seed in any::<u64>(),
    ) {
        let post = posterior_from(&ws, 30.0, 70.0);
        let model = PsychometricModel::default();
        let cands = CandidateSet::linspace(20.0, 80.0, 61).unwrap();
        let greedy = choose_greedy(&post, &model, &cands);
        let scan = cands
            .points()
            .iter()
            .map(|&x| expected_information_gain(&post, &model, x))
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((greedy.expected_gain_nats - scan).abs() < 1e-12);
        let sweep = sweep_order(cands.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for kind in [StrategyKind::OfflineUniform, StrategyKind::RandomUniform, StrategyKind::FixedX { x: 50.0 }] {
            let d = choose_baseline(&kind, t, &cands, &sweep, &mut rng, &post, &model, &CostModel::unit()).unwrap();
            prop_assert!(greedy.expected_gain_nats >= d.expected_gain_nats - 1e-12);
        }
    }

    #[test]
    fn log_det_is_concave_on_segments(a in psd2(), b in psd2(), s in 0.0..1.0f64) {
        let mid = &a * (1.0 - s) + &b * s;
        let chord = (1.0 - s) * log_det_spd(&a) + s * log_det_spd(&b);
        prop_assert!(log_det_spd(&mid) >= chord - 1e-10);
    }

    #[test]
    fn solver_certificates(mats in prop::collection::vec(psd2(), 2..7)) {
        let set = CandidateInformationSet::from_matrices(mats.clone()).unwrap();
        let d = solve_doptimal(&set, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let total: f64 = d.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert!(d.weights.iter().all(|w| *w >= 0.0));
        let mut b = DMatrix::zeros(2, 2);
        for (m, w) in mats.iter().zip(&d.weights) {
            b += *w * m;
        }
        let bs = d.b_star_matrix();
        prop_assert!((&b - &bs).amax() < 1e-10);
        prop_assert!((d.log_det - log_det_spd(&bs)).abs() < 1e-10);
        prop_assert!((d.h_star_nats - h_star_from_log_det(d.log_det, 2)).abs() < 1e-12);
        let inv = inverse_spd(&bs).unwrap();
        let sens = mats
            .iter()
            .map(|m| (&inv * m).trace())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(sens <= 2.0 + 1e-7, "sensitivity {}", sens);
    }

    #[test]
    fn per_cost_scaling_covariance(
        mats in prop::collection::vec(psd2(), 2..6),
        costs in prop::collection::vec(0.5..3.0f64, 6),
        c in 0.1..10.0f64,
    ) {
        let k = mats.len();
        let xs: Vec<f64> = (0..k).map(|i| i as f64).collect();
        let base = CandidateInformationSet::new(
            xs.clone(), mats.clone(), costs[..k].to_vec(), Normalization::PerCost).unwrap();
        let scaled = CandidateInformationSet::new(
            xs, mats, costs[..k].iter().map(|v| v * c).collect(), Normalization::PerCost).unwrap();
        let a = solve_doptimal(&base, 1e-10, DEFAULT_MAX_ITER).unwrap();
        let b = solve_doptimal(&scaled, 1e-10, DEFAULT_MAX_ITER).unwrap();
        let diff = (b.b_star_matrix() * c - a.b_star_matrix()).amax();
        prop_assert!(diff < 1e-6 * a.b_star_matrix().amax().max(1.0), "diff {}", diff);
    }

    #[test]
    fn rho_is_finitely_additive(
        modulus in 2i64..9,
        a in -50i64..50,
        l1 in 1i64..80,
        l2 in 1i64..80,
    ) {
        let member = |k: i64| k.rem_euclid(modulus) == 0 || k.rem_euclid(7) == 3;
        let (b, c) = (a + l1, a + l1 + l2);
        let whole = rho(member, a, c).unwrap();
        let parts = ((b - a) as f64 * rho(member, a, b).unwrap()
            + (c - b) as f64 * rho(member, b, c).unwrap())
            / (c - a) as f64;
        prop_assert!((whole - parts).abs() < 1e-15);
    }

    #[test]
    fn realized_gains_telescope(obs in observations()) {
        let trace = psychometric_trace(&obs, |_| 1.0);
        prop_assert!(telescoping_error(&trace) < 1e-8);
    }

    #[test]
    fn unit_costs_make_both_clocks_agree(obs in observations()) {
        let trace = psychometric_trace(&obs, |_| 1.0);
        let unit = track_b(&trace, Clock::UnitTime);
        let cost = track_b(&trace, Clock::Cost);
        for (u, c) in unit.iter().zip(&cost) {
            prop_assert!((u - c).amax() < 1e-15);
        }
    }

    #[test]
    fn jittered_costs_stay_in_bounds(seed in any::<u64>(), jitter in 0.0..0.9f64) {
        let cost = CostModel::outcome_linear(1.0, 3.0).with_jitter(jitter).unwrap();
        let (lo, hi) = cost.bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..2000 {
            let c = cost.sample((i % 2) as f64, 0.0, &mut rng);
            prop_assert!(c >= lo && c <= hi && c > 0.0);
        }
        let model = PsychometricModel::default();
        let e = expected_cost_at(&cost, &model, 40.0, &[50.0]).unwrap();
        prop_assert!(e >= lo && e <= hi);
    }

    #[test]
    fn balanced_split_gains_log2(bits in 2u32..10, lo in 0usize..200, width_pow in 1u32..6) {
        let model = TwentyQuestionsModel::new(bits, 1);
        let size = model.size();
        let width = 1usize << width_pow.min(bits);
        let lo = lo % (size - width + 1);
        let g = Arc::new(ParameterGrid::integers(size).unwrap());
        // uniform on the support {lo+1, …, lo+width}
        let lw = (0..size)
            .map(|i| if i >= lo && i < lo + width { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        let post = GridPosterior::from_log_weights(g, lw).unwrap();
        let threshold = (lo + width / 2) as f64;
        let x = model.placement(0, threshold);
        let gain = expected_information_gain(&post, &model, x);
        prop_assert!((gain - std::f64::consts::LN_2).abs() < 1e-12, "gain {}", gain);
    }
}

fn psychometric_trace(obs: &[(f64, f64)], cost: impl Fn(usize) -> f64) -> TrialTrace {
    let model = PsychometricModel::default();
    let mut post = GridPosterior::uniform(grid(0.0, 100.0, 256));
    let mut h = post.differential_entropy();
    let mut trace = TrialTrace::new(1, h);
    let mut cum = 0.0;
    for (t, &(x, y)) in obs.iter().enumerate() {
        post.update_in_place(&model, x, y).unwrap();
        let next = post.differential_entropy();
        cum += cost(t);
        trace.records.push(TrialRecord {
            t: t + 1,
            x,
            y,
            cost: cost(t),
            cum_cost: cum,
            gain_nats: h - next,
            entropy_nats: next,
            observed_info: model.neg_hessian(y, &[50.0], x),
            fisher_at_truth: model.fisher(&[50.0], x),
            expected_cost_at_truth: 1.0,
            efficiency_ratio: 1.0,
            entropy_plus_kl: next,
        });
        h = next;
    }
    trace
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn runs_are_deterministic_and_round_trip(seed in 0u64..1000, trials in 5usize..40) {
        let text = format!(
            "[model]\nkind = \"psychometric\"\ngrid = 128\ncandidates = 64\n\n\
             [cost]\nkind = \"outcome_linear\"\nbase = 1.0\non_zero = 3.0\njitter = 0.3\n\n\
             [strategy]\nkind = \"myopic_gain_per_cost\"\n\n\
             [run]\ntheta0 = 45.0\ntrials = {trials}\nseed = {seed}\n"
        );
        let config = ExperimentConfig::from_toml_str(&text).unwrap();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        prop_assert_eq!(&a.summary, &b.summary);
        let bytes = trace_csv_bytes(&a.replicates[0].rows).unwrap();
        prop_assert_eq!(&bytes, &trace_csv_bytes(&b.replicates[0].rows).unwrap());
        prop_assert_eq!(a.replicates[0].rows.len(), trials);
        let back = parse_trace_csv(&bytes).unwrap();
        for (r, s) in a.replicates[0].rows.iter().zip(&back) {
            for (u, v) in [
                (r.det_bt_unit, s.det_bt_unit),
                (r.residual_unit, s.residual_unit),
                (r.residual_cost, s.residual_cost),
                (r.cum_cost, s.cum_cost),
            ] {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cost_budget_brackets_the_last_trial(seed in 0u64..1000, budget in 5.0..60.0f64) {
        let text = format!(
            "[model]\nkind = \"psychometric\"\ngrid = 128\ncandidates = 64\n\n\
             [cost]\nkind = \"outcome_linear\"\nbase = 1.0\non_zero = 3.0\n\n\
             [run]\ntheta0 = 45.0\nbudget = {budget}\nseed = {seed}\n"
        );
        let config = ExperimentConfig::from_toml_str(&text).unwrap();
        let r = run_experiment(&config).unwrap();
        let rows = &r.replicates[0].rows;
        let n = rows.len();
        prop_assert!(rows[n - 1].cum_cost > budget);
        if n > 1 {
            prop_assert!(rows[n - 2].cum_cost <= budget);
        }
    }
}
