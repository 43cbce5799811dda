use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use wframe::{run_inner_loop, ChainState, InitKind, SamplerConfig};
use wframe_bench::gabor_bank;

fn sampler_benches(c: &mut Criterion) {
    let bank = gabor_bank(0.5);
    let cfg = SamplerConfig {
        steps_per_iter: 50,
        ..SamplerConfig::default()
    };
    let init = ChainState::initialize(&[16, 16], 9, 1, InitKind::Zeros).unwrap();

    c.bench_function("inner_loop_9x16x16_L50", |b| {
        b.iter_batched(
            || init.clone(),
            |mut state| run_inner_loop(&mut state, &bank, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, sampler_benches);
criterion_main!(benches);
