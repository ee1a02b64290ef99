use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use prx::kernels::KernelSpec;
use prx::measure::{DominatingMeasure, MixingMeasure};
use prx::par;
use prx::prmlx::log_prmlx;
use prx::sim::{eval_points, generate, EvalPointKind, Scenario, ScenarioKind};
use prx::{fit_permuted, LocalizationConfig};

fn setup(n: usize) -> (prx::Dataset, MixingMeasure) {
    let sim = generate(&Scenario { kind: ScenarioKind::LocationShift, n, seed: 1 }).unwrap();
    let dom = DominatingMeasure::from_data(sim.data.y(), 200).unwrap();
    (sim.data, MixingMeasure::uniform(dom, None).unwrap())
}

fn permuted_fit(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit_permuted");
    g.sample_size(10);
    let spec = KernelSpec::Gaussian { sigma: 1.0 };
    let cfg = LocalizationConfig::isotropic(1, 50.0).unwrap();
    let pts = eval_points(EvalPointKind::UniformGrid, 21, 1, None, 0).unwrap();
    for n in [250, 1000] {
        let (data, init) = setup(n);
        g.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
            b.iter(|| par::sequential(|| fit_permuted(&data, &pts, &cfg, &spec, &init, 10, 0).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| {
            b.iter(|| fit_permuted(&data, &pts, &cfg, &spec, &init, 10, 0).unwrap())
        });
    }
    g.finish();
}

fn pseudo_likelihood(c: &mut Criterion) {
    let mut g = c.benchmark_group("log_prmlx");
    g.sample_size(10);
    let spec = KernelSpec::Gaussian { sigma: 1.0 };
    let cfg = LocalizationConfig::isotropic(1, 50.0).unwrap();
    for n in [250, 1000] {
        let (data, init) = setup(n);
        g.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
            b.iter(|| par::sequential(|| log_prmlx(&data, &spec, &cfg, &init).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, _| {
            b.iter(|| log_prmlx(&data, &spec, &cfg, &init).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, permuted_fit, pseudo_likelihood);
criterion_main!(benches);
