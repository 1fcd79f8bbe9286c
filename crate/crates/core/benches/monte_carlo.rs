use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dectd_core::env::TransitionSampler;
use dectd_core::harness::{monte_carlo_sequential, Model, RunConfig, SamplingMode};
use dectd_core::rng::{stream_rng, Stream};
use dectd_core::tdcore::{decentralized_step_into, AgentMatrix};

fn config(num_agents: usize, num_states: usize, dim: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.environment.num_states = num_states;
    cfg.features.dim = dim;
    cfg.features.state_dim = 2 * dim;
    cfg.network.num_agents = num_agents;
    cfg.network.avg_degree = (num_agents as f64 - 1.0).min(5.0);
    cfg.training.sampling = SamplingMode::Markov;
    cfg.training.steps = 2_000;
    cfg.experiment.record_every = 10;
    cfg
}

fn runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for &(m, n, p) in &[(4usize, 10usize, 3usize), (30, 100, 10)] {
        let cfg = config(m, n, p);
        let model = Model::generate(&cfg).expect("benchmark model");
        let label = format!("M{m}_S{n}_p{p}");
        group.bench_with_input(BenchmarkId::new("sequential", &label), &cfg, |b, cfg| {
            b.iter(|| monte_carlo_sequential(cfg, &model, 8).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", &label), &cfg, |b, cfg| {
            b.iter(|| dectd_core::harness::monte_carlo_parallel(cfg, &model, 8).unwrap())
        });
    }
    group.finish();
}

fn kernel(c: &mut Criterion) {
    let cfg = config(30, 100, 10);
    let model = Model::generate(&cfg).expect("benchmark model");
    let sampler = TransitionSampler::new(&model.mrp, &model.stationary).unwrap();
    let mut rng = stream_rng(0, Stream::Probe);
    let theta = AgentMatrix::uniform(30, 10, &mut rng);
    let mut out = AgentMatrix::zeros(30, 10);
    let sample = sampler.sample_iid(&mut rng);
    c.bench_function("decentralized_step_M30_p10", |b| {
        b.iter(|| {
            decentralized_step_into(black_box(&theta), model.network.weights(), &sample, &model.features, 0.9, 0.01, &mut out).unwrap();
        })
    });
}

criterion_group!(benches, runs, kernel);
criterion_main!(benches);
