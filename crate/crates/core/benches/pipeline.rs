//! Sequential versus data-parallel execution of the hot paths, plus
//! best-first search against exhaustive enumeration.
//!
//! Build with `--no-default-features` to measure the sequential fallback
//! alone; the "parallel" cases then also run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use patchrag::grid::partition;
use patchrag::harness::pipeline::prepare;
use patchrag::harness::{
    gen_suite, run_experiment, ExperimentConfig, ProviderSource, Providers, SuiteSpec, VariantKind,
};
use patchrag::retrieval::{score_crops, EmbeddingCache, ScoreOptions};
use patchrag::search::{exhaustive_search, re_search, SearchParams};

fn cores() -> usize {
    std::thread::available_parallelism().map_or(4, |n| n.get())
}

fn modes() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("parallel", cores())]
}

fn bench_scoring(c: &mut Criterion) {
    let inst = gen_suite(&SuiteSpec {
        count: 1,
        grid_rows: 16,
        grid_cols: 16,
        ..SuiteSpec::default()
    })
    .unwrap()
    .remove(0);
    let providers = Providers::oracle(&inst, 0.6).unwrap();
    let grid = partition(inst.render().unwrap(), inst.cell_size).unwrap();
    let mut group = c.benchmark_group("score_crops_16x16");
    for (name, n) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                // fresh cache so every iteration embeds all crops
                let cache = EmbeddingCache::new();
                score_crops(
                    &inst.question,
                    &grid,
                    providers.embed.as_ref(),
                    &cache,
                    ScoreOptions { max_in_flight: n },
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_experiment(c: &mut Criterion) {
    let suite = gen_suite(&SuiteSpec {
        count: 32,
        ..SuiteSpec::default()
    })
    .unwrap();
    let mut group = c.benchmark_group("run_experiment_32_instances");
    group.sample_size(10);
    for (name, workers) in modes() {
        let cfg = ExperimentConfig {
            variants: vec![VariantKind::RapFull],
            workers,
            ..ExperimentConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_experiment(black_box(&suite), &cfg, &ProviderSource::Oracle).unwrap())
        });
    }
    group.finish();
}

fn bench_search(c: &mut Criterion) {
    let inst = gen_suite(&SuiteSpec {
        count: 2,
        single_fraction: 0.0,
        ..SuiteSpec::default()
    })
    .unwrap()
    .remove(0);
    let providers = Providers::oracle(&inst, 0.6).unwrap();
    let prep = prepare(&inst, &providers, true, ScoreOptions::default()).unwrap();
    let scores = prep.scores.unwrap();
    let params = SearchParams::default();
    let mut group = c.benchmark_group("search_8x8");
    group.bench_function("best-first", |b| {
        b.iter(|| {
            re_search(
                &prep.grid,
                &scores,
                providers.confidence.as_ref(),
                &inst.question,
                &params,
            )
            .unwrap()
        })
    });
    group.bench_function("exhaustive", |b| {
        b.iter(|| {
            exhaustive_search(
                &prep.grid,
                &scores,
                providers.confidence.as_ref(),
                &inst.question,
                &params,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_scoring, bench_experiment, bench_search);
criterion_main!(benches);
