use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ehyp_core::classifier::{build_example_theorem3, stencil_margin, ExampleTheorem3Spec};
use ehyp_core::exec::Execution;
use ehyp_core::grid::{GridSpec, SampleGrid};
use ehyp_core::hypersurface::{einstein_residual, structure_residuals, CheckConfig};

fn grid_eval(c: &mut Criterion) {
    let build = build_example_theorem3(&ExampleTheorem3Spec::reference()).unwrap();
    let base = CheckConfig::default();
    let grid = SampleGrid::tensor(
        build.data.metric.bounds(),
        GridSpec { points_per_axis: 2, margin_fraction: 0.1 },
        stencil_margin(base.step),
    )
    .unwrap();

    let mut group = c.benchmark_group("grid_eval");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let cfg = CheckConfig { execution: exec, ..base.clone() };
        let label = format!("{exec:?}").to_lowercase();
        group.bench_with_input(BenchmarkId::new("einstein", &label), &cfg, |b, cfg| {
            b.iter(|| einstein_residual(&build.data.metric, build.rho, &grid, cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("structure", &label), &cfg, |b, cfg| {
            b.iter(|| structure_residuals(&build.data, &grid, cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, grid_eval);
criterion_main!(benches);
