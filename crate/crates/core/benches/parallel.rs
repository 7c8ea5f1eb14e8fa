//! Parallel vs sequential throughput on the three batch-heavy paths:
//! dataset generation, batched gradient computation, and evaluation.
//! Results are bit-identical either way (ordered reduction); these
//! benches measure the speedup the rayon path buys.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use slicetrack::evaluation::{evaluate, EvalOptions};
use slicetrack::network::params::{axpy, zeroed};
use slicetrack::network::{sequence_slices, LossMode, ModelConfig, TrackerModel};
use slicetrack::parallel::map_ordered;
use slicetrack::phantom::{generate_phantom, normalize, PhantomParams, Volume};
use slicetrack::sampler::{MaskPolicy, SliceSequence};
use slicetrack::training::{build_epoch, TrainConfig};

fn subjects() -> Vec<Volume> {
    (1..=2u64)
        .map(|s| normalize(&generate_phantom(s, 40, &PhantomParams::default()).unwrap()).unwrap())
        .collect()
}

fn bench_cfg(parallel: bool) -> TrainConfig {
    TrainConfig {
        sequences_per_subject: 8,
        slice_size: 32,
        mask_policy: MaskPolicy::NoMask,
        parallel,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn model() -> TrackerModel<f32> {
    TrackerModel::init(
        ModelConfig {
            input_size: 32,
            conv_channels: vec![16, 32, 64],
            hidden: 64,
            rot_hidden: 32,
            decoder_embed: 16,
            ..ModelConfig::default()
        },
        3,
    )
    .unwrap()
}

fn bench_generation(c: &mut Criterion) {
    let vols = subjects();
    let mut g = c.benchmark_group("sequence_generation");
    g.sample_size(10);
    for parallel in [false, true] {
        let cfg = bench_cfg(parallel);
        let name = if parallel { "parallel" } else { "sequential" };
        g.bench_function(name, |b| {
            b.iter(|| black_box(build_epoch(&vols, &cfg, 0).unwrap()))
        });
    }
    g.finish();
}

fn bench_batch_gradients(c: &mut Criterion) {
    let vols = subjects();
    let cfg = bench_cfg(true);
    let pool = build_epoch(&vols, &cfg, 0).unwrap();
    let model = model();
    let mut g = c.benchmark_group("batch_gradients");
    g.sample_size(10);
    for parallel in [false, true] {
        let name = if parallel { "parallel" } else { "sequential" };
        let refs: Vec<&SliceSequence> = pool.iter().take(8).collect();
        g.bench_function(name, |b| {
            b.iter_batched(
                || zeroed(&model),
                |mut acc| {
                    let steps = map_ordered(parallel, &refs, |seq| {
                        let slices = sequence_slices::<f32>(seq);
                        model
                            .train_step(&slices, &seq.targets, 10, LossMode::SplitMse, None)
                            .unwrap()
                    });
                    for s in &steps {
                        axpy(&mut acc, 1.0 / steps.len() as f32, &s.grads);
                    }
                    black_box(acc)
                },
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn bench_evaluation(c: &mut Criterion) {
    let vols = subjects();
    let cfg = bench_cfg(true);
    let pool = build_epoch(&vols, &cfg, 0).unwrap();
    let model = model();
    let mut g = c.benchmark_group("evaluation");
    g.sample_size(10);
    for parallel in [false, true] {
        let name = if parallel { "parallel" } else { "sequential" };
        let opts = EvalOptions { m: 10, parallel };
        g.bench_function(name, |b| {
            b.iter(|| black_box(evaluate(&model, &pool, &opts).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_generation, bench_batch_gradients, bench_evaluation);
criterion_main!(benches);
