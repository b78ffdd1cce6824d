use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use stokes_homog::cell::{effective_tensor_volume, solve_cell_basis, CellConfig, EffectiveTensor};
use stokes_homog::fem::{assemble, build_space, BcSpec, FormKind};
use stokes_homog::fields::{default_test_functions, FieldSpec};
use stokes_homog::geometry::{build_cell_mesh, build_perforated_mesh, build_rect_mesh, CellGeometry, Epsilon, Rect};
use stokes_homog::hom::{assemble_hom, run_hom, HomParams};
use stokes_homog::micro::{assemble_micro, run_micro, MicroParams, RunOptions};
use stokes_homog::noise::{sample_wiener, NoiseConfig, NoiseOperators, TimeGrid};

fn geometry() -> CellGeometry {
    CellGeometry::new(0.25, 32)
}

fn meshing(c: &mut Criterion) {
    let g = geometry();
    c.bench_function("cell_mesh_h1/24", |b| b.iter(|| build_cell_mesh(black_box(&g), 1.0 / 24.0).unwrap()));
    let eps = Epsilon::new(8).unwrap();
    c.bench_function("perforated_mesh_eps1/8", |b| b.iter(|| build_perforated_mesh(&g, black_box(eps), Rect::unit(), 1.0 / 12.0).unwrap()));
}

fn assembly(c: &mut Criterion) {
    let pm = build_perforated_mesh(&geometry(), Epsilon::new(8).unwrap(), Rect::unit(), 1.0 / 12.0).unwrap();
    let space = build_space(&pm.mesh, &[], &BcSpec::dirichlet_outer()).unwrap();
    c.bench_function("stiffness_eps1/8", |b| b.iter(|| assemble(&pm.mesh, &space, FormKind::Stiffness(1.0))));
    c.bench_function("mass_eps1/8", |b| b.iter(|| assemble(&pm.mesh, &space, FormKind::Mass)));
}

fn cell(c: &mut Criterion) {
    let mesh = build_cell_mesh(&geometry(), 1.0 / 24.0).unwrap();
    let cfg = CellConfig::default();
    let mut g = c.benchmark_group("cell");
    g.sample_size(10);
    g.bench_function("basis_and_tensor_h1/24", |b| {
        b.iter(|| {
            let sols = solve_cell_basis(&mesh, &cfg).unwrap();
            effective_tensor_volume(&sols, &mesh).unwrap()
        })
    });
    g.finish();
}

fn noise(c: &mut Criterion) {
    let ops = NoiseOperators::new(&NoiseConfig::default(), Rect::unit(), geometry()).unwrap();
    let grid = TimeGrid::new(0.25, 250).unwrap();
    c.bench_function("wiener_path_J32_250steps", |b| b.iter(|| sample_wiener(&ops.q1, &ops.q2, &grid, black_box(7))));
}

fn stepping(c: &mut Criterion) {
    let ops = NoiseOperators::new(&NoiseConfig { j: 16, ..NoiseConfig::default() }, Rect::unit(), geometry()).unwrap();
    let opts = RunOptions { test_functions: default_test_functions(), keep_final: false };
    let u0 = FieldSpec::sine([1, 1], [1.0, 1.0]);
    let mut g = c.benchmark_group("stepping");
    g.sample_size(10);

    let hom_mesh = build_rect_mesh(Rect::unit(), 1.0 / 32.0).unwrap();
    let hp = HomParams { u0: u0.clone(), t_final: 0.01, steps: 10, area_ystar: 0.8, perim_hole: 1.5, ..HomParams::default() };
    let hom = assemble_hom(&hom_mesh, Rect::unit(), &EffectiveTensor::isotropic(1.0), &hp, Some(&ops)).unwrap();
    let paths: Vec<_> = (0..16).map(|s| sample_wiener(&ops.q1, &ops.q2, &hp.grid().unwrap(), s)).collect();
    g.bench_function("hom_10_steps_16_samples", |b| b.iter(|| run_hom(&hom, &paths, &opts).unwrap()));

    let pm = build_perforated_mesh(&geometry(), Epsilon::new(4).unwrap(), Rect::unit(), 1.0 / 12.0).unwrap();
    let mp = MicroParams { u0, t_final: 0.01, steps: 10, ..MicroParams::default() };
    g.bench_function("micro_assemble_factor_eps1/4", |b| b.iter(|| assemble_micro(&pm, &mp, Some(&ops)).unwrap()));
    let sys = assemble_micro(&pm, &mp, Some(&ops)).unwrap();
    g.bench_function("micro_10_steps_16_samples_eps1/4", |b| b.iter(|| run_micro(&sys, &paths, &opts).unwrap()));
    g.finish();
}

criterion_group!(benches, meshing, assembly, cell, noise, stepping);
criterion_main!(benches);
