use criterion::{criterion_group, criterion_main, Criterion};
use fbsdiff_bench::toy_problem;
use fbsdiff_core::{run_fbsdiff, run_fbsdiffpp, BandMode, PipelineConfig};

fn pipelines(c: &mut Criterion) {
    let (z0, schedule, mut d) = toy_problem(4, 32, 32);
    let mut group = c.benchmark_group("pipelines");
    group.sample_size(10);

    let pp = PipelineConfig::fbsdiffpp(BandMode::Low);
    group.bench_function("fbsdiffpp/32", |b| {
        b.iter(|| run_fbsdiffpp(&z0, &pp, &schedule, &mut d).unwrap())
    });

    // Reduced inversion so the long-inversion variant stays benchable.
    let mut fbs = PipelineConfig::fbsdiff(BandMode::Low);
    fbs.inversion_steps = 200;
    group.bench_function("fbsdiff-inv200/32", |b| {
        b.iter(|| run_fbsdiff(&z0, &fbs, &schedule, &mut d).unwrap())
    });
    group.finish();
}

criterion_group!(benches, pipelines);
criterion_main!(benches);
