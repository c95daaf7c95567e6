use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use pwave::codec::{decode_plane, encode_plane, EncodeOptions, Preset};
use pwave::nn::{conv2d, ConvSpec, Tensor};
use pwave::rangecoder::{decode_symbols, encode_symbols, CdfCache, ParamGrid, PROB_TOTAL};
use pwave::ContextMode;
use pwave_bench::DecodeFixture;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn decode(c: &mut Criterion) {
    let mut g = c.benchmark_group("decode");
    g.sample_size(10);
    for mode in [ContextMode::Autoregressive, ContextMode::FourStep, ContextMode::FourStepLl] {
        let f = DecodeFixture::new(Preset::Compact, mode, 64, 64);
        g.throughput(Throughput::Elements((f.plane.width * f.plane.height) as u64));
        g.bench_function(BenchmarkId::new(mode.name(), "64x64"), |b| {
            b.iter(|| decode_plane(&f.bitstream, &f.model).unwrap())
        });
    }
    g.finish();
}

fn encode(c: &mut Criterion) {
    let mut g = c.benchmark_group("encode");
    g.sample_size(10);
    for mode in [ContextMode::Autoregressive, ContextMode::FourStep] {
        let f = DecodeFixture::new(Preset::Compact, mode, 64, 64);
        g.bench_function(BenchmarkId::new(mode.name(), "64x64"), |b| {
            b.iter(|| encode_plane(&f.plane, &f.model, &EncodeOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn range_coder(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cache = CdfCache::new(-64, 63);
    let n = 10_000;
    let tables: Vec<_> = (0..n)
        .map(|_| {
            let mu = ParamGrid::mu_value(rng.gen_range(-64..=64));
            let sigma = ParamGrid::sigma_value(rng.gen_range(10..50));
            cache.get(mu, sigma)
        })
        .collect();
    let symbols: Vec<i32> = tables
        .iter()
        .map(|t| {
            let u = rng.gen_range(0..PROB_TOTAL);
            t.min_symbol() + (t.cumulative().partition_point(|&c| c <= u) - 1) as i32
        })
        .collect();
    let payload = encode_symbols(&symbols, |i| Arc::clone(&tables[i]));

    let mut g = c.benchmark_group("range_coder");
    g.throughput(Throughput::Elements(n as u64));
    g.bench_function("encode", |b| b.iter(|| encode_symbols(&symbols, |i| Arc::clone(&tables[i]))));
    g.bench_function("decode", |b| b.iter(|| decode_symbols(&payload, n, |i| Arc::clone(&tables[i])).unwrap()));
    g.finish();
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = c.benchmark_group("conv2d");
    for ch in [8usize, 32] {
        let spec = ConvSpec::same(ch, ch, 3);
        let x = Tensor::from_vec([1, ch, 64, 64], (0..ch * 4096).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::from_vec([ch, ch, 3, 3], (0..ch * ch * 9).map(|_| rng.gen_range(-0.1..0.1)).collect()).unwrap();
        g.throughput(Throughput::Elements((ch * ch * 9 * 4096) as u64));
        g.bench_function(BenchmarkId::new("3x3", ch), |b| b.iter(|| conv2d(&x, &spec, &w, None, None).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, decode, encode, range_coder, conv);
criterion_main!(benches);
