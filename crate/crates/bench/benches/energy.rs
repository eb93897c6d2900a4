use std::hint::black_box;

use comhe::energy::{bank_energy_node, energy, energy_gradient, EnergySpec, NeuronBank};
use comhe::numkit::{gaussian_matrix, Tape};
use comhe::projection::{rp_energy, rp_energy_with_gradient, Aggregation, ProjectionSet};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const SIZES: [(usize, usize); 3] = [(64, 16), (64, 64), (256, 64)];

fn bank(n: usize, d: usize) -> NeuronBank {
    NeuronBank::new(gaussian_matrix(n, d, 7, 1.0)).unwrap()
}

fn bench_energy(c: &mut Criterion) {
    let spec = EnergySpec::riesz(2.0).with_half_space(true);
    let mut group = c.benchmark_group("energy");
    for (n, d) in SIZES {
        let b = bank(n, d);
        group.bench_with_input(
            BenchmarkId::new("value", format!("{n}x{d}")),
            &b,
            |bench, b| bench.iter(|| energy(black_box(b), &spec).unwrap()),
        );
        group.bench_with_input(
            BenchmarkId::new("gradient", format!("{n}x{d}")),
            &b,
            |bench, b| bench.iter(|| energy_gradient(black_box(b), &spec).unwrap()),
        );
    }
    group.finish();
}

fn bench_rp(c: &mut Criterion) {
    let spec = EnergySpec::riesz(2.0).with_half_space(true);
    let mut group = c.benchmark_group("rp_energy");
    for (n, d) in SIZES {
        let b = bank(n, d);
        let ps = ProjectionSet::new(5, d.min(30), d, Aggregation::Mean, None, 3).unwrap();
        group.bench_with_input(
            BenchmarkId::new("value", format!("{n}x{d}")),
            &b,
            |bench, b| bench.iter(|| rp_energy(black_box(b), &ps, &spec).unwrap()),
        );
        group.bench_with_input(
            BenchmarkId::new("gradient", format!("{n}x{d}")),
            &b,
            |bench, b| bench.iter(|| rp_energy_with_gradient(black_box(b), &ps, &spec).unwrap()),
        );
    }
    group.finish();
}

fn bench_tape(c: &mut Criterion) {
    let spec = EnergySpec::riesz(2.0).with_half_space(true);
    let mut group = c.benchmark_group("tape_backward");
    for (n, d) in SIZES {
        let w = gaussian_matrix(n, d, 5, 1.0);
        group.bench_function(format!("{n}x{d}"), |bench| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.var(black_box(&w).clone());
                let e = bank_energy_node(&mut tape, x, &spec).unwrap();
                tape.backward(e).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_energy, bench_rp, bench_tape);
criterion_main!(benches);
