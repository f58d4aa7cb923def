use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};

use fusetrack::crf::solve_multibranch;
use fusetrack::fusion::{fuse_frame, fusion_graph, gate_pairs, FusionWeights};
use fusetrack::kalman::{init_state, predict, update};
use fusetrack::{run_sequence, Ablation, CouplingWeights, NoiseConfig, PipelineConfig, SizeStats};
use fusetrack_bench::crowded;

fn bench_fusion(c: &mut Criterion) {
    let sim = crowded(1);
    let ctx = &sim.scene.contexts[0];
    let (dets, props) = (&sim.detections[0], &sim.proposals[0]);
    let w = FusionWeights::default();
    let stats = SizeStats::default();
    c.bench_function("fuse_frame 50x50", |b| b.iter(|| fuse_frame(dets, props, &stats, ctx, &w)));

    let pairs = gate_pairs(dets, props, ctx, &w);
    let graph = fusion_graph(&pairs, dets, props, &stats, ctx, &w);
    let mut group = c.benchmark_group("multibranch");
    for branches in [1, 8, 32] {
        group.bench_with_input(BenchmarkId::from_parameter(branches), &branches, |b, &k| {
            b.iter(|| solve_multibranch(&graph, k))
        });
    }
    group.finish();
}

fn bench_filter(c: &mut Criterion) {
    let sim = crowded(2);
    let (c0, c1) = (&sim.scene.contexts[0], &sim.scene.contexts[1]);
    let stats = SizeStats::default();
    let noise = NoiseConfig::default();
    let w = FusionWeights::default();
    let obs0 = fuse_frame(&sim.detections[0], &sim.proposals[0], &stats, c0, &w);
    let obs1 = fuse_frame(&sim.detections[1], &sim.proposals[1], &stats, c1, &w);
    let state = init_state(&obs0[0], c0, &stats, &noise).unwrap();
    let cw = CouplingWeights::default();
    c.bench_function("kalman predict+update", |b| {
        b.iter(|| {
            let s = predict(&state, 0.1, &c1.intrinsics, &c0.ego, &c1.ego, &cw, &noise).unwrap();
            update(&s, &obs1[0], c1, &stats, &noise)
        })
    });
}

fn bench_pipeline(c: &mut Criterion) {
    let frames = 20;
    let seq = crowded(frames).sequence();
    let cfg = PipelineConfig::default();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.throughput(Throughput::Elements(u64::from(frames)));
    group.bench_function("20 frames, 50 objects", |b| {
        b.iter_batched(|| seq.clone(), |s| run_sequence(&s, &cfg, Ablation::full()).unwrap(), BatchSize::LargeInput)
    });
    group.finish();
}

criterion_group!(benches, bench_fusion, bench_filter, bench_pipeline);
criterion_main!(benches);
