use criterion::{criterion_group, criterion_main, Criterion};
use karma_bench::{case_study, hetero, warmed};
use karma_core::model::MarketKernel;
use karma_core::solver::{advance, analyze, evaluate_value, SolverParams};

fn solver_step(c: &mut Criterion) {
    let params = SolverParams::default();
    let mut group = c.benchmark_group("solver");
    group.sample_size(10);
    for (name, game) in [("case_study", case_study()), ("hetero", hetero())] {
        let state = warmed(&game, 20);
        group.bench_function(format!("kernel/{name}"), |b| {
            b.iter(|| MarketKernel::new(&game, &state))
        });
        group.bench_function(format!("evaluate_value/{name}"), |b| {
            b.iter(|| evaluate_value(&game, &state, 0, &params).unwrap())
        });
        group.bench_function(format!("analyze/{name}"), |b| {
            b.iter(|| analyze(&game, &state, &params, None))
        });
        let analysis = analyze(&game, &state, &params, None);
        group.bench_function(format!("advance/{name}"), |b| {
            b.iter(|| advance(&game, &state, &analysis, &params))
        });
    }
    group.finish();
}

criterion_group!(benches, solver_step);
criterion_main!(benches);
