//! Throughput benchmarks for the penalty operator, the Newton state solve
//! and the ADMM reference.

use criterion::{criterion_group, criterion_main, Criterion};
use sandpile_core::{
    penalty_apply, solve_state, vi_solve_admm, AdmmParams, GradMode, Grid, NodalField,
    ObstacleField, SolverParams,
};

fn bench_penalty_apply(c: &mut Criterion) {
    let grid = Grid::new_2d(31);
    let phi = ObstacleField::constant(grid, 1.0);
    let u = NodalField::from_fn(grid, |x| {
        3.0 * (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin()
    });
    c.bench_function("penalty_apply_2d_n31_weak", |b| {
        b.iter(|| penalty_apply(std::hint::black_box(&u), &phi, GradMode::Weak).unwrap())
    });
    let mu = grid.h();
    c.bench_function("penalty_apply_2d_n31_dmu", |b| {
        b.iter(|| {
            penalty_apply(std::hint::black_box(&u), &phi, GradMode::Incremental { mu }).unwrap()
        })
    });
}

fn bench_newton_solve(c: &mut Criterion) {
    let grid = Grid::new_1d(63);
    let phi = ObstacleField::constant(grid, 1.0);
    let f = NodalField::constant(grid, 5.0);
    let params = SolverParams::new(0.05, 100.0, GradMode::Incremental { mu: grid.h() });
    c.bench_function("newton_solve_1d_n63_gamma100", |b| {
        b.iter(|| solve_state(std::hint::black_box(&f), &phi, &params, None).unwrap())
    });
}

fn bench_admm(c: &mut Criterion) {
    let grid = Grid::new_1d(63);
    let phi = ObstacleField::constant(grid, 1.0);
    let f = NodalField::constant(grid, 5.0);
    let params = AdmmParams::default();
    c.bench_function("admm_1d_n63", |b| {
        b.iter(|| vi_solve_admm(std::hint::black_box(&f), &phi, 0.05, &params).unwrap())
    });
}

criterion_group!(benches, bench_penalty_apply, bench_newton_solve, bench_admm);
criterion_main!(benches);
