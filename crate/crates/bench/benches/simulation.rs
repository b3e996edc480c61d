use criterion::{criterion_group, criterion_main, Criterion};
use karma_bench::{case_study, warmed};
use karma_core::simulation::{run_repeat, Scheme, SimulationConfig, Strategy};

fn simulation(c: &mut Criterion) {
    let game = case_study();
    let state = warmed(&game, 20);
    let config = SimulationConfig {
        n_agents: 200,
        interactions: 1000,
        repeats: 1,
        ..Default::default()
    };
    let mut group = c.benchmark_group("run_repeat");
    group.sample_size(20);
    for scheme in Scheme::ALL {
        let strategy = match scheme {
            Scheme::Karma => Strategy::Karma(&state),
            other => Strategy::Benchmark(other),
        };
        group.bench_function(scheme.to_string(), |b| {
            b.iter(|| run_repeat(&game, strategy, &config, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, simulation);
criterion_main!(benches);
