use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use wframe_bench::{gabor_bank, textures};

fn energy_benches(c: &mut Criterion) {
    let bank = gabor_bank(0.5);
    let x = textures(1).remove(0);

    c.bench_function("energy_16x16_k8", |b| b.iter(|| bank.energy(black_box(&x)).unwrap()));
    c.bench_function("grad_x_16x16_k8", |b| {
        b.iter(|| bank.grad_x_energy(black_box(&x)).unwrap())
    });
    c.bench_function("grad_theta_sq_grad_norm_16x16_k8", |b| {
        b.iter(|| bank.grad_theta_sq_grad_norm(black_box(&x)).unwrap())
    });
}

criterion_group!(benches, energy_benches);
criterion_main!(benches);
