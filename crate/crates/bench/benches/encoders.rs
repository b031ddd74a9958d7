use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use locenc::encoders::{sample_aux, EncoderKind, PositionEncoder};
use locenc::nn::{backprop, loss_softmax_ce};
use locenc::{Activation, Arch, EncoderSpec, MlpParams};
use locenc_bench::uniform_points;

fn encode(c: &mut Criterion) {
    let pts = uniform_points(1000, 1);
    let mut group = c.benchmark_group("encode_1000");
    for kind in [
        EncoderKind::Grid,
        EncoderKind::Theory,
        EncoderKind::SphereC,
        EncoderKind::SphereM,
        EncoderKind::Rbf,
        EncoderKind::Rff,
        EncoderKind::SphericalHarmonics,
    ] {
        let spec = EncoderSpec::new(kind);
        let aux = sample_aux(&spec, &pts).unwrap();
        let enc = PositionEncoder::new(spec, aux).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(kind), &pts, |b, pts| {
            b.iter(|| {
                for &p in pts {
                    black_box(enc.encode(p));
                }
            })
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let net = MlpParams::init(Arch::Ffn, Activation::Relu, 192, 256, 2, 8, 1).unwrap();
    let x: Vec<f64> = (0..192).map(|i| (i as f64 * 0.37).sin()).collect();
    c.bench_function("ffn_256x2_forward_backward", |b| {
        b.iter(|| {
            let out = net.forward(black_box(&x)).unwrap();
            let (_, g) = loss_softmax_ce(&out, 3).unwrap();
            black_box(backprop(&net, &x, &g).unwrap())
        })
    });
}

criterion_group!(benches, encode, train_step);
criterion_main!(benches);
