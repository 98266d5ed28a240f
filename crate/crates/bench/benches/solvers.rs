use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nullspde_bench::{data, problem};
use nullspde_core::audit::{audit, AuditOptions, AuditSetup, Inequality};
use nullspde_core::semilinear::fixed_point_forward;
use nullspde_core::{FixedPointOptions, HumData, NonlinearityKind, NonlinearitySpec, Problem};

fn evolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("evolution");
    for depth in [6, 8, 10] {
        let p = problem(63, depth, Problem::ForwardTwoControls, 1e-4);
        let s = &p.solver;
        let y0 = vec![1.0; s.n()];
        let u = s.control_shape().map(|_| 0.5);
        group.bench_with_input(BenchmarkId::new("forward", depth), &depth, |b, _| {
            b.iter(|| s.forward_core(black_box(&y0), Some(&u), Some(&u)).unwrap())
        });
        let leaves = vec![1.0; s.tree.leaf_count() * s.n()];
        group.bench_with_input(BenchmarkId::new("backward", depth), &depth, |b, _| {
            b.iter(|| s.backward_spde(black_box(&leaves), Some(&u)).unwrap())
        });
    }
    group.finish();
}

fn hum(c: &mut Criterion) {
    let mut group = c.benchmark_group("hum");
    group.sample_size(10);
    for kind in [Problem::ForwardTwoControls, Problem::BackwardOneControl] {
        let p = problem(63, 8, kind, 1e-4);
        let d = data(&p, 42);
        group.bench_function(format!("{kind:?}"), |b| b.iter(|| p.solve(black_box(&d)).unwrap()));
    }
    group.finish();
}

fn semilinear(c: &mut Criterion) {
    let p = problem(63, 8, Problem::ForwardTwoControls, 1e-4);
    let HumData::Forward { y0, .. } = data(&p, 42) else { unreachable!() };
    let spec = NonlinearitySpec::new(NonlinearityKind::ScaledSin, 0.5).unwrap();
    let opts = FixedPointOptions::default();
    let mut group = c.benchmark_group("semilinear");
    group.sample_size(10);
    group.bench_function("forward_fixed_point", |b| {
        b.iter(|| fixed_point_forward(&p, black_box(&y0), &spec, &opts).unwrap())
    });
    group.finish();
}

fn carleman(c: &mut Criterion) {
    let p = problem(63, 8, Problem::ForwardTwoControls, 1e-4);
    let beta = nullspde_core::weights::build_spatial_weight(
        p.solver.grid.d_zero,
        nullspde_core::Interval::new(0.4, 0.6),
        &p.solver.grid,
    )
    .unwrap();
    let mut group = c.benchmark_group("audit");
    group.sample_size(10);
    for ineq in Inequality::ALL {
        let setup = AuditSetup {
            solver: &p.solver,
            beta: &beta,
            params: p.params.with_variant(ineq.variant()),
        };
        let opts = AuditOptions {
            samples: 4,
            ..AuditOptions::default()
        };
        group.bench_function(ineq.name(), |b| b.iter(|| audit(ineq, &setup, &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, evolution, hum, semilinear, carleman);
criterion_main!(benches);
