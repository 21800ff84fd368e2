use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use strandforge::baseline::{diffuse_field_3d, diffuse_orientation_2d, ShellParams};
use strandforge::datagen::{raster_for, render_bust_depth};
use strandforge::neural::{NetKind, WeightStore};
use strandforge::pipeline::{grow_in_view, infer_s2o, demo_sketch};
use strandforge::strands::{voxelize_strands, GrowParams};
use strandforge::{BustModel, GridSpec, ViewPose};

fn stages(c: &mut Criterion) {
    let res = 32;
    let grid = GridSpec::for_resolution(res);
    let bust = BustModel::default_bust();
    let (sketch, mask) = demo_sketch(res).rasterize().unwrap();
    let dense = diffuse_orientation_2d(&sketch, &mask).unwrap();
    let depth = render_bust_depth(&bust, &ViewPose::IDENTITY, &raster_for(&grid));
    let field = diffuse_field_3d(&dense, &mask, &depth, grid, &ShellParams::default()).unwrap();
    let strands = grow_in_view(&bust, &field, &ViewPose::IDENTITY, 3000, &GrowParams::default()).unwrap();
    let s2o = WeightStore::init(NetKind::S2o, 0.25, res, grid.nz, 0).unwrap();

    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    g.bench_function("diffuse_2d", |b| b.iter(|| diffuse_orientation_2d(black_box(&sketch), &mask).unwrap()));
    g.bench_function("diffuse_3d", |b| {
        b.iter(|| diffuse_field_3d(black_box(&dense), &mask, &depth, grid, &ShellParams::default()).unwrap())
    });
    g.bench_function("grow_3000", |b| {
        b.iter(|| grow_in_view(&bust, black_box(&field), &ViewPose::IDENTITY, 3000, &GrowParams::default()).unwrap())
    });
    g.bench_function("voxelize", |b| b.iter(|| voxelize_strands(black_box(&strands), grid).unwrap()));
    g.bench_function("s2o_inference", |b| b.iter(|| infer_s2o(&s2o, black_box(&sketch), &mask).unwrap()));
    g.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
