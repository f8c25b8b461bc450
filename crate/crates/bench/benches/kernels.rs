use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pseudocool_bench::cooling_model;
use pseudocool_core::bathlib::{fit_matsubara, FitWindow, UnderdampedBath};
use pseudocool_core::dynamics::{generator_apply, FramePropagator};

fn frame_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("frame_step");
    group.sample_size(20);
    for n in [3, 4, 5] {
        let (model, rho0) = cooling_model(n);
        let h = 0.04;
        group.bench_function(format!("n{n}"), |b| {
            b.iter_batched(
                || FramePropagator::new(&model, &rho0, h).expect("propagator"),
                |mut p| p.advance(h).expect("step"),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn literal_generator(c: &mut Criterion) {
    let mut group = c.benchmark_group("generator_apply");
    group.sample_size(20);
    for n in [3, 4] {
        let (model, rho0) = cooling_model(n);
        group.bench_function(format!("n{n}"), |b| {
            b.iter(|| generator_apply(&model, 0.0, &rho0).expect("apply"))
        });
    }
    group.finish();
}

fn matsubara_fit(c: &mut Criterion) {
    let bath =
        UnderdampedBath::with_lambda_prefactor(1.15, 3.8, 10.2, f64::INFINITY).expect("bath");
    let mut group = c.benchmark_group("matsubara_fit");
    group.sample_size(10);
    group.bench_function("two_terms", |b| {
        b.iter(|| fit_matsubara(&bath, 2, FitWindow::default()).expect("fit"))
    });
    group.finish();
}

criterion_group!(benches, frame_step, literal_generator, matsubara_fit);
criterion_main!(benches);
