//! Sequential versus rayon-parallel execution of the hot loops. Built
//! without the `parallel` feature, both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lexsel_core::analysis::fit_lme;
use lexsel_core::discovery::accumulate_counts_with;
use lexsel_core::models::{cross_validate_with, Hyperparams};
use lexsel_core::par::{self, Execution};
use lexsel_core::synth::{discovery_corpus, planted_cue_dataset, simulate_lme, LmeSim, PlantedCue};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn counts(c: &mut Criterion) {
    let (pairs, _) = discovery_corpus(0);
    let mut g = c.benchmark_group("accumulate_counts");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| accumulate_counts_with(black_box(&pairs), exec))
        });
    }
    g.finish();
}

fn cv(c: &mut Criterion) {
    let ds = planted_cue_dataset(&PlantedCue {
        n_choices: 3,
        n_examples: 400,
        noise: 0.1,
        ..PlantedCue::default()
    });
    let grid = Hyperparams::default_grid();
    let mut g = c.benchmark_group("cross_validate_svm");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| cross_validate_with(black_box(&ds), &grid, 5, 0, exec).unwrap())
        });
    }
    g.finish();
}

fn lme_monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("lme_monte_carlo_20");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                par::map_range(exec, 20, |seed| {
                    fit_lme(&simulate_lme(&LmeSim {
                        seed: seed as u64,
                        ..LmeSim::default()
                    }))
                    .map(|f| f.beta)
                    .unwrap_or(f64::NAN)
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, counts, cv, lme_monte_carlo);
criterion_main!(benches);
