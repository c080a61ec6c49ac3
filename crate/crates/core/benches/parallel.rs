use std::hint::black_box;

use boundary_core::catalog::example;
use boundary_core::exec::Execution;
use boundary_core::montecarlo::{estimate_stopping_value, SimConfig};
use boundary_core::stopping::RuleKind;
use criterion::{criterion_group, criterion_main, Criterion};

fn stopping_paths(c: &mut Criterion) {
    let p = example(1).unwrap().problem().unwrap();
    let rule = RuleKind::TwoPoint(6.0, 14.0);
    let mut group = c.benchmark_group("exit from (6, 14), 4000 paths");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let mut cfg = SimConfig::new(1e-2, 4000, 1);
        cfg.execution = exec;
        group.bench_function(name, |b| {
            b.iter(|| estimate_stopping_value(&p.spec, &p.payoff, black_box(10.0), &rule, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, stopping_paths);
criterion_main!(benches);
