//! Criterion benchmarks for the hot kernels: dechirped pulse synthesis,
//! range compression, and voxel back projection.
//!
//! Run with: cargo bench -p misar-bench

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use num_complex::Complex64;

use misar_core::arraygeom::{build_default_geometry, GeometryConfig};
use misar_core::imaging::{backproject_parallel, BpOptions, VoxelGrid};
use misar_core::simulator::{
    random_scene, simulate_collection, ChannelErrorModel, Scene, SimOptions, Trajectory,
};
use misar_core::waveform::{range_compress, sample_beat_signal, ChirpParams, Window};
use misar_core::Vec3;

fn bench_beat_signal(c: &mut Criterion) {
    let params = ChirpParams::default();
    let mut group = c.benchmark_group("beat_signal");
    group.throughput(Throughput::Elements(params.n_samples as u64));
    group.bench_function("single_path", |b| {
        b.iter(|| sample_beat_signal(3.0, Complex64::new(1.0, 0.0), 0.0, &params))
    });
    group.finish();
}

fn bench_range_compress(c: &mut Criterion) {
    let params = ChirpParams::default();
    let samples = sample_beat_signal(3.0, Complex64::new(1.0, 0.0), 0.0, &params);
    let mut group = c.benchmark_group("range_compress");
    for upsample in [1usize, 8] {
        group.bench_with_input(
            BenchmarkId::from_parameter(upsample),
            &upsample,
            |b, &up| b.iter(|| range_compress(&samples, &params, Window::None, up).unwrap()),
        );
    }
    group.finish();
}

fn bench_simulate(c: &mut Criterion) {
    let geom = build_default_geometry(&GeometryConfig::default()).unwrap();
    let params = ChirpParams::default();
    let traj = Trajectory::stationary(Vec3::zeros());
    let scene = random_scene(64, 0.3, 9);
    let mut group = c.benchmark_group("simulate_collection");
    group.sample_size(10);
    group.throughput(Throughput::Elements(
        (scene.scatterers.len() * 128) as u64,
    ));
    group.bench_function("64pts_1burst", |b| {
        b.iter(|| {
            simulate_collection(
                &scene,
                &traj,
                &geom,
                &ChannelErrorModel::identity(),
                &params,
                1,
                20e-3,
                &SimOptions::default(),
            )
            .unwrap()
        })
    });
    group.finish();
}

fn bench_backprojection(c: &mut Criterion) {
    let geom = build_default_geometry(&GeometryConfig::default()).unwrap();
    let params = ChirpParams::default();
    let traj = Trajectory::stationary(Vec3::zeros());
    let cube = simulate_collection(
        &Scene::point(Vec3::zeros(), Complex64::new(1.0, 0.0)),
        &traj,
        &geom,
        &ChannelErrorModel::identity(),
        &params,
        4,
        20e-3,
        &SimOptions::default(),
    )
    .unwrap();
    let grid = VoxelGrid {
        origin: Vec3::new(-0.08, -0.08, -0.04),
        spacing: Vec3::new(0.005, 0.005, 0.005),
        dims: [32, 32, 16],
    };
    let opts = BpOptions::default();

    let mut group = c.benchmark_group("backprojection");
    group.sample_size(10);
    group.throughput(Throughput::Elements((grid.len() * cube.n_pulses()) as u64));
    for workers in [1usize, 2, 4] {
        group.bench_with_input(
            BenchmarkId::new("workers", workers),
            &workers,
            |b, &w| {
                b.iter(|| backproject_parallel(&cube, &geom, &traj, &grid, &opts, w).unwrap())
            },
        );
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_beat_signal,
    bench_range_compress,
    bench_simulate,
    bench_backprojection
);
criterion_main!(benches);
