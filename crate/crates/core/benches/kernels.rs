use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use groupedmixer::codec::encode_latents;
use groupedmixer::exec;
use groupedmixer::grouping::partition;
use groupedmixer::model::{forward_stack, ModelConfig, ModelWeights};
use groupedmixer::numerics::{matmul, Tensor};
use groupedmixer::rng::SplitMix64;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut g = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_| g.next_normal() as f32)
}

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", true), ("sequential", false)]
}

fn run<R>(parallel: bool, f: impl FnOnce() -> R) -> R {
    if parallel {
        f()
    } else {
        exec::sequential(f)
    }
}

fn bench_matmul(c: &mut Criterion) {
    let a = randn(&[768, 384], 1);
    let b = randn(&[384, 384], 2);
    let mut group = c.benchmark_group("matmul_768x384x384");
    for (name, par) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| run(par, || matmul(&a, &b, None).unwrap()))
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let cfg = ModelConfig::toy();
    let w = ModelWeights::init_random(&cfg, 3).unwrap();
    let g = partition(&randn(&[16, 16, cfg.latent_channels], 4), &cfg.scheme).unwrap();
    let mut group = c.benchmark_group("forward_stack_toy_16x16");
    group.sample_size(20);
    for (name, par) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| run(par, || forward_stack(&g, &w).unwrap()))
        });
    }
    group.finish();
}

fn bench_encode(c: &mut Criterion) {
    let cfg = ModelConfig::toy();
    let w = ModelWeights::init_random(&cfg, 5).unwrap();
    let y = Tensor::from_fn(&[16, 16, cfg.latent_channels], {
        let mut g = SplitMix64::new(6);
        move |_| (g.next_normal() * 4.0) as f32
    });
    let mut group = c.benchmark_group("encode_toy_16x16");
    group.sample_size(10);
    for (name, par) in modes() {
        group.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| run(par, || encode_latents(&y, &w).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_forward, bench_encode);
criterion_main!(benches);
