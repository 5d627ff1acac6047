use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kvh_core::kvh::{evolve, kvh_rhs};
use kvh_core::liouville::evolve_pushforward;
use kvh_core::madelung::classical_density;
use kvh_core::qhd::{schrodinger_evolve, Line, QWaveFunction};
use kvh_core::vonneumann::{evolve_kernel, kernel_from_wavefunction};
use kvh_core::{DensityField, EvolveOptions, ExitPolicy, GaussianPacket, HamiltonianSpec, PhaseGrid};

fn kvh(c: &mut Criterion) {
    let h = HamiltonianSpec::harmonic();
    let g = PhaseGrid::periodic_square(8.0, 128).unwrap();
    let psi = GaussianPacket::new((1.5, 0.0), 0.5, 1.0).sample(&g).unwrap();
    c.bench_function("kvh_rhs 128x128", |b| b.iter(|| kvh_rhs(&h, black_box(&psi))));
    let opts = EvolveOptions::new(0.01, 1e-3);
    c.bench_function("kvh rk4 10 steps 128x128", |b| b.iter(|| evolve(&h, black_box(&psi), &opts).unwrap()));
    let rho = DensityField::new(classical_density(&psi));
    c.bench_function("pushforward t=0.1 128x128", |b| {
        b.iter(|| evolve_pushforward(black_box(&rho), &h, 0.1, 1e-2, ExitPolicy::Zero).unwrap())
    });
}

fn kernel(c: &mut Criterion) {
    let h = HamiltonianSpec::harmonic();
    let g = PhaseGrid::periodic_square(4.0, 16).unwrap();
    let psi = GaussianPacket::new((0.5, 0.0), 0.6, 1.0).sample(&g).unwrap().normalized().unwrap();
    let k = kernel_from_wavefunction(&psi).unwrap();
    let opts = EvolveOptions::new(0.05, 5e-3);
    let mut group = c.benchmark_group("kernel");
    group.sample_size(10);
    group.bench_function("evolve 10 steps 16x16", |b| b.iter(|| evolve_kernel(black_box(&k), &h, &opts).unwrap()));
    group.finish();
}

fn qhd(c: &mut Criterion) {
    let line = Line::new(-12.0, 12.0, 256).unwrap();
    let psi = QWaveFunction::coherent(line.clone(), 1.0, 0.5, 0.7, 1.0, 1.0).unwrap();
    let v = line.sample(|x| 0.5 * x * x);
    c.bench_function("schrodinger 100 steps n=256", |b| {
        b.iter(|| schrodinger_evolve(black_box(&psi), &v, 0.1, 1e-3).unwrap())
    });
}

criterion_group!(benches, kvh, kernel, qhd);
criterion_main!(benches);
