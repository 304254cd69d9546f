use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use egoreg::features::{describe_image, FeatureConfig};
use egoreg::matching::{match_spatial, MatchConfig, MatchMode};
use egoreg::par::Exec;
use egoreg::registration::{prepare_frames, PipelineConfig};
use egoreg::synth::{synth_scene, SynthConfig};

fn features_for(exec: Exec) -> FeatureConfig {
    let mut f = FeatureConfig::default();
    f.detector.max_keypoints = 120;
    f.context.exec = exec;
    f
}

fn bench(c: &mut Criterion) {
    let mut cfg = SynthConfig::day_night_default(1);
    cfg.trajectory.frames = 4;
    let scene = synth_scene(&cfg).expect("valid preset");
    let image = &scene.model_views[3].image;
    let model_kps = describe_image(image, &features_for(Exec::Sequential)).unwrap();
    let query_kps = describe_image(&scene.night.frames[1].image, &features_for(Exec::Sequential)).unwrap();

    let mut g = c.benchmark_group("parallel_vs_sequential");
    g.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let name = if exec.is_parallel() { "parallel" } else { "sequential" };
        g.bench_with_input(BenchmarkId::new("describe_image", name), &exec, |b, &ex| {
            let f = features_for(ex);
            b.iter(|| describe_image(image, &f).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("match_spatial", name), &exec, |b, &ex| {
            let mut m = MatchConfig { mode: MatchMode::Spatial, ..MatchConfig::default() };
            m.kernel.exec = ex;
            b.iter(|| match_spatial(&query_kps, &model_kps, &m).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("prepare_frames", name), &exec, |b, &ex| {
            let mut p = PipelineConfig { exec: ex, ..PipelineConfig::default() };
            p.features = features_for(ex);
            p.tracker.exec = ex;
            b.iter(|| prepare_frames(&scene.night, &p).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
