use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use sddmesh_bench::{dirichlet_fixture, periodic_fixture};
use sddmesh_core::density::{sample_bicubic, sample_bilinear};
use sddmesh_core::meshpde::{step_mesh_2d, BoundaryData, Provenance, StepLimits};
use sddmesh_core::stochastic::{
    advance_walker, estimate_point_dirichlet, estimate_point_periodic, McConfig, RandomStream, WalkerState,
};
use sddmesh_core::IndexBox;

fn bench_interpolation(c: &mut Criterion) {
    let (_, field) = periodic_fixture(41);
    let pts: Vec<[f64; 2]> = (0..256).map(|k| [(k as f64 * 0.037) % 1.0, (k as f64 * 0.061) % 1.0]).collect();
    c.bench_function("bilinear_sample_256", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for p in &pts {
                acc += sample_bilinear(&field.grid, &field.rho, black_box(*p)).unwrap();
            }
            acc
        })
    });
    c.bench_function("bicubic_sample_256", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for p in &pts {
                acc += sample_bicubic(&field.grid, &field.rho, black_box(*p)).unwrap();
            }
            acc
        })
    });
}

fn bench_walker(c: &mut Criterion) {
    let (_, field) = periodic_fixture(41);
    let stream = RandomStream::new(1);
    c.bench_function("advance_walker_1k_substeps", |b| {
        b.iter_batched(
            || stream.replicate_rng(0, 0, 0),
            |mut rng| {
                use rand::Rng;
                use rand_distr::StandardNormal;
                let mut w = WalkerState::at([0.5, 0.5]);
                for _ in 0..1000 {
                    let g = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    w = advance_walker(&w, &field, 5e-4, g).unwrap();
                }
                w
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_estimators(c: &mut Criterion) {
    let (mesh_p, field_p) = periodic_fixture(41);
    let mc = McConfig::new(200, 1, 5e-4, 1, 1).unwrap();
    let stream = RandomStream::new(mc.seed);
    c.bench_function("estimate_periodic_n200", |b| {
        b.iter(|| estimate_point_periodic(black_box((21, 21)), &mesh_p, &field_p, 5e-4, &mc, &stream, 0).unwrap())
    });

    let (mesh_d, field_d) = dirichlet_fixture(41);
    let bx = IndexBox { i_lo: 0, i_hi: 40, j_lo: 0, j_hi: 40 };
    let bdata = BoundaryData::static_from_mesh(&mesh_d, &bx, Provenance::PhysicalBoundary);
    let mc_d = McConfig::new(200, 10, 1e-3, 1, 1).unwrap();
    c.bench_function("estimate_dirichlet_n200_k10", |b| {
        b.iter(|| {
            estimate_point_dirichlet(black_box((20, 20)), &mesh_d, &field_d, &bdata, 1e-3, &mc_d, &stream, 0).unwrap()
        })
    });
}

fn bench_mesh_step(c: &mut Criterion) {
    let (mesh, field) = dirichlet_fixture(41);
    let bx = IndexBox { i_lo: 0, i_hi: 40, j_lo: 0, j_hi: 40 };
    let bdata = BoundaryData::static_from_mesh(&mesh, &bx, Provenance::PhysicalBoundary);
    let limits = StepLimits::default();
    c.bench_function("step_mesh_2d_41x41", |b| {
        b.iter(|| step_mesh_2d(&mesh, &field, &bx, &bdata, black_box(1e-3), &limits).unwrap())
    });
}

criterion_group!(benches, bench_interpolation, bench_walker, bench_estimators, bench_mesh_step);
criterion_main!(benches);
