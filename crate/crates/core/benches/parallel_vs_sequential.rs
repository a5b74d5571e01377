use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use targeted_dp::attack::{run_attack_with, AttackConfig};
use targeted_dp::dataset::{generate_synthetic, SyntheticSpec};
use targeted_dp::exec::Exec;
use targeted_dp::privacy::{empirical_keep_rate, protect_dataset_with, Epsilon, PrivacyConfig, Strategy};
use targeted_dp::stereotype::{build_index, ScoringSubset};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn protection(c: &mut Criterion) {
    let (ds, attrs) = generate_synthetic(&SyntheticSpec {
        num_users: 2000,
        num_items: 500,
        ratings_per_user: 40,
        signal_strength: 0.8,
        seed: 1,
    })
    .unwrap();
    let index = build_index(&ds, &attrs, ScoringSubset::Full).unwrap();
    let cfg = PrivacyConfig::new(Epsilon::new(1.0).unwrap(), 0.3, Strategy::Targeted, 7).unwrap();
    let mut group = c.benchmark_group("protect_dataset");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| protect_dataset_with(black_box(&ds), &attrs, Some(&index), &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn attack(c: &mut Criterion) {
    let (ds, attrs) = generate_synthetic(&SyntheticSpec {
        num_users: 300,
        num_items: 150,
        ratings_per_user: 20,
        signal_strength: 0.8,
        seed: 2,
    })
    .unwrap();
    let cfg = AttackConfig {
        epochs: 5,
        runs: 8,
        ..AttackConfig::default()
    };
    let mut group = c.benchmark_group("run_attack");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_attack_with(black_box(&ds), &attrs, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn keep_rate(c: &mut Criterion) {
    let eps = Epsilon::new(0.5).unwrap();
    let mut group = c.benchmark_group("empirical_keep_rate");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| empirical_keep_rate(eps, black_box(1_000_000), 3, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, protection, attack, keep_rate);
criterion_main!(benches);
