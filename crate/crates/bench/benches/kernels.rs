use criterion::{black_box, criterion_group, criterion_main, Criterion};

use sarriver::centerline::{cost_map, least_cost_path, trace_on_cost};
use sarriver::crf::{build_energy, min_energy_labeling};
use sarriver::despeckle::{Architecture, DenoiserModel};
use sarriver::lines::{default_bank, detect_lines};
use sarriver::raster::log_transform;
use sarriver::SegParams;
use sarriver_bench::speckled_scene;

fn kernels(c: &mut Criterion) {
    let (scene, noisy) = speckled_scene(256);
    let bank = default_bank();
    c.bench_function("detect_lines 256x256", |b| b.iter(|| detect_lines(black_box(&noisy), &bank).unwrap()));

    let resp = detect_lines(&noisy, &bank).unwrap();
    let cost = cost_map(&resp, 10.0).unwrap();
    let nodes = &scene.control_points.nodes;
    c.bench_function("least_cost_path 256x256", |b| {
        b.iter(|| least_cost_path(black_box(&cost), nodes[0], nodes[2]).unwrap())
    });

    let line = trace_on_cost(&cost, &scene.control_points).unwrap();
    let (energy, _, _) = build_energy(&noisy, &line, &SegParams::default()).unwrap();
    c.bench_function("min-cut 256x256", |b| b.iter(|| min_energy_labeling(black_box(&energy)).unwrap()));

    let model: DenoiserModel = DenoiserModel::new(Architecture::default(), 0).unwrap();
    let log_noisy = log_transform(&noisy).unwrap();
    c.bench_function("network forward 256x256", |b| b.iter(|| model.forward(black_box(&log_noisy)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kernels
}
criterion_main!(benches);
