use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqdesign_core::doptimal::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use seqdesign_core::harness::Experiment;
use seqdesign_core::strategies::score_candidates;
use seqdesign_core::{
    solve_doptimal, CandidateInformationSet, CandidateSet, CostModel, ExperimentConfig,
    GridPosterior, LinearGaussianModel, Normalization, ParameterGrid, PsychometricModel,
};

/// Posterior after a few observations, so the active set is realistic.
fn warmed_posterior(cells: usize) -> GridPosterior {
    let model = PsychometricModel::default();
    let grid = Arc::new(ParameterGrid::uniform(0.0, 100.0, cells).unwrap());
    let mut post = GridPosterior::uniform(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..8 {
        let x = rng.random_range(30.0..70.0);
        let y = f64::from(u8::from(rng.random_bool(0.5)));
        post.update_in_place(&model, x, y).unwrap();
    }
    post
}

fn bayes_update(c: &mut Criterion) {
    let model = PsychometricModel::default();
    let mut group = c.benchmark_group("bayes_update");
    for cells in [1024, 4096] {
        let post = warmed_posterior(cells);
        group.bench_with_input(BenchmarkId::from_parameter(cells), &post, |b, post| {
            b.iter(|| post.bayes_update(&model, black_box(48.0), 1.0).unwrap())
        });
    }
    group.finish();
}

fn gain_scan(c: &mut Criterion) {
    let model = PsychometricModel::default();
    let post = warmed_posterior(1024);
    let cost = CostModel::outcome_linear(1.0, 3.0);
    let direct = CandidateSet::linspace(0.0, 100.0, 512).unwrap();
    let tabulated = direct.clone().tabulated(&model, Arc::clone(post.grid()));
    let mut group = c.benchmark_group("gain_scan_512");
    group.bench_function("direct", |b| {
        b.iter(|| score_candidates(black_box(&post), &model, &cost, &direct))
    });
    group.bench_function("tabulated", |b| {
        b.iter(|| score_candidates(black_box(&post), &model, &cost, &tabulated))
    });
    group.finish();

    let lg = LinearGaussianModel::polynomial(1, 0.5);
    let axes = vec![
        seqdesign_core::Axis::new(-2.0, 2.0, 41),
        seqdesign_core::Axis::new(-2.0, 2.0, 41),
    ];
    let grid = Arc::new(ParameterGrid::new(axes).unwrap());
    let post = GridPosterior::uniform(grid);
    let cands = CandidateSet::linspace(-1.0, 1.0, 9).unwrap();
    c.bench_function("gain_scan_linear_gaussian_41x41", |b| {
        b.iter(|| score_candidates(black_box(&post), &lg, &CostModel::unit(), &cands))
    });
}

fn doptimal(c: &mut Criterion) {
    let model = PsychometricModel::default();
    let xs: Vec<f64> = (0..512).map(|i| 100.0 * i as f64 / 511.0).collect();
    let cost = CostModel::outcome_linear(1.0, 3.0);
    let mut group = c.benchmark_group("doptimal_psychometric_512");
    for norm in [Normalization::UnitCost, Normalization::PerCost] {
        let set = CandidateInformationSet::from_model(&model, &[50.0], &xs, &cost, norm).unwrap();
        group.bench_function(format!("{norm:?}"), |b| {
            b.iter(|| solve_doptimal(black_box(&set), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap())
        });
    }
    group.finish();
}

fn simulate(c: &mut Criterion) {
    let config = ExperimentConfig::from_toml_str(
        "[model]\nkind = \"psychometric\"\n\n[run]\ntheta0 = 50.0\ntrials = 200\n",
    )
    .unwrap();
    let exp = Experiment::build(&config).unwrap();
    c.bench_function("greedy_200_trials_grid_1024", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            exp.simulate(&[50.0], &mut rng).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bayes_update, gain_scan, doptimal, simulate
}
criterion_main!(benches);
