//! Monte Carlo hot paths on a single-thread pool against the global pool.
//!
//! The single-thread pool runs the same code as the `parallel` feature but
//! without work stealing, which is what the sequential fallback computes.
//! Compare against a build with `--no-default-features` for the fallback
//! itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cyrisk::compound::{couple_scenarios, simulate_line, AggregateTable, LineModel, Severity};
use cyrisk::copula::CopulaSpec;
use cyrisk::pricing::{indifference_premium, PolicyTerms, PremiumMode, SolverOptions, UtilitySpec};
use cyrisk::SeedStream;
use rayon::ThreadPoolBuilder;

fn line(i: usize) -> LineModel {
    LineModel {
        label: format!("line-{i}"),
        rate: 5.0,
        severity: Severity::Pareto {
            alpha: 1.2,
            x_min: 1e5,
        },
    }
}

fn tables(j: usize) -> Vec<AggregateTable> {
    (0..2)
        .map(|i| simulate_line(&line(i), j, SeedStream::new(7).child(&format!("{i}"))).unwrap())
        .collect()
}

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    vec![
        (
            "sequential",
            ThreadPoolBuilder::new().num_threads(1).build().unwrap(),
        ),
        ("parallel", ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn bench(c: &mut Criterion) {
    let pools = pools();
    let t = tables(100_000);
    let joint = couple_scenarios(&t, &CopulaSpec::gaussian_pair(0.5), 200_000, 3).unwrap();
    let utility = UtilitySpec::log(1e9);
    let terms = PolicyTerms::equal_weights(0.1, 2);
    let solver = SolverOptions::default();

    let mut g = c.benchmark_group("simulate_line");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                pool.install(|| simulate_line(&line(0), 100_000, SeedStream::new(1)).unwrap())
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("couple_scenarios");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                pool.install(|| {
                    couple_scenarios(&t, &CopulaSpec::gaussian_pair(0.5), 200_000, 3).unwrap()
                })
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("premium_solve");
    g.sample_size(10);
    for (name, pool) in &pools {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                pool.install(|| {
                    indifference_premium(&joint, &utility, &terms, PremiumMode::Portfolio, &solver)
                        .unwrap()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
