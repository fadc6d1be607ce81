use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rampsim::learner::{critic_loss, LearnerConfig, Networks, SampleNoise, Transition};
use rampsim::par::Execution;
use rampsim::rng::RngStream;
use rampsim::scenario::DemandSpec;
use rampsim::world::{frame_dim, initial_policy};
use rampsim::{ControllerMode, ScenarioConfig, World};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn episode(c: &mut Criterion) {
    let cfg = ScenarioConfig {
        controller: ControllerMode::TrustFull,
        duration: 120.0,
        warmup: 30.0,
        demand: DemandSpec::Fixed { level: 1500.0, split: 0.8 },
        seed: 3,
        ..ScenarioConfig::base()
    };
    let policy = initial_policy(&cfg, 32);
    let mut group = c.benchmark_group("episode");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let mut w = World::new(cfg.clone(), Some(policy.clone())).unwrap();
                w.exec = exec;
                w.run().unwrap();
                black_box(w.finish().metrics)
            })
        });
    }
    group.finish();
}

fn critic_batch(c: &mut Criterion) {
    let cfg = LearnerConfig::default();
    let input = frame_dim(&ScenarioConfig::base());
    let frames = 10;
    let mut rng = RngStream::new(1, "bench/critic");
    let net = Networks::init(input, &cfg, &mut rng);
    let target = net.clone();
    let batch: Vec<Transition> = (0..cfg.batch_size)
        .map(|i| Transition {
            state: (0..input * frames).map(|_| rng.standard_normal() as f32).collect(),
            lateral: i % 3,
            a_long: 0.0,
            reward: -1.0,
            next_state: (0..input * frames).map(|_| rng.standard_normal() as f32).collect(),
            done: false,
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let noise: Vec<SampleNoise> = (0..batch.len())
        .map(|_| SampleNoise {
            next: rng.standard_normal(),
            actor: rng.standard_normal(),
        })
        .collect();
    let mut group = c.benchmark_group("critic_loss");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(critic_loss(&net, &target, &refs, &noise, &cfg, exec).unwrap().0))
        });
    }
    group.finish();
}

criterion_group!(benches, episode, critic_batch);
criterion_main!(benches);
