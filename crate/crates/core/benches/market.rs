use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gridveil_core::grid::{generate, GridCase};
use gridveil_core::par::ExecMode;
use gridveil_core::{Mode, RunConfig};
use gridveil_core::sim::run_market;

/// Fixed-length runs, so both strategies do identical work.
fn rounds(c: &mut Criterion) {
    let cases = [
        ("bus15", GridCase::from_document(generate::ieee15(generate::BUS15_SEED)).expect("case")),
        ("bus69", GridCase::from_document(generate::radial(69, 69)).expect("case")),
    ];
    let mut group = c.benchmark_group("market");
    group.sample_size(10);
    for (name, case) in &cases {
        for (mode, iters) in [(Mode::PlaintextP3, 200), (Mode::Secure, 5)] {
            for exec in [ExecMode::Sequential, ExecMode::Parallel] {
                let config = RunConfig { mode, max_iters: iters, tol: 1e-300, exec, ..RunConfig::default() };
                let id = BenchmarkId::new(format!("{mode}/{exec:?}"), name);
                group.bench_with_input(id, &config, |b, config| {
                    b.iter(|| run_market(case, config).expect("run"))
                });
            }
        }
    }
    group.finish();
}

criterion_group!(benches, rounds);
criterion_main!(benches);
