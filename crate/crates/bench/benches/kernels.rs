use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use memtopo_core::device::{DeviceConfig, DifferentialCrossbar};
use memtopo_core::pruning::topk_mask;
use memtopo_core::snn::kernels::conv2d_forward;
use memtopo_core::snn::lif::lif_step;
use memtopo_core::{ConvGeometry, LifParams, LifState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn conv(c: &mut Criterion) {
    // second classifier convolution at batch 32
    let g = ConvGeometry::new(12, 64, 5, (15, 15));
    let batch = 32;
    let x = uniform(batch * g.in_len(), 1);
    let w = uniform(g.fan_in() * g.out_channels, 2);
    c.bench_function("conv2d_forward 12c->64c 5x5 b32", |b| {
        b.iter(|| conv2d_forward(black_box(&x), batch, black_box(&w), &g).unwrap())
    });
}

fn lif(c: &mut Criterion) {
    let n = 32 * 12 * 30 * 30;
    let x = uniform(n, 3);
    let p = LifParams::default();
    c.bench_function("lif_step 345600", |b| {
        let mut st = LifState::zeros(n);
        b.iter(|| lif_step(&mut st, black_box(&x), &p).unwrap())
    });
}

fn topk(c: &mut Criterion) {
    let s = uniform(64 * 12 * 25, 4);
    c.bench_function("topk_mask 19200 k=50", |b| b.iter(|| topk_mask(black_box(&s), 50.0).unwrap()));
}

fn crossbar(c: &mut Criterion) {
    let xb = DifferentialCrossbar::electroform(1600, 10, DeviceConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    c.bench_function("crossbar read 1600x10 noise 0.02", |b| {
        b.iter(|| xb.read_weights(black_box(0.02), &mut rng).unwrap())
    });
}

criterion_group!(benches, conv, lif, topk, crossbar);
criterion_main!(benches);
