use criterion::{criterion_group, criterion_main, Criterion};
use maskrestore::degrade::clean::gen_clean;
use maskrestore::nn::{AdaSam, AdaSamConfig, Network, Restorer, RestorerConfig};
use maskrestore::{Graph, Tensor};
use std::hint::black_box;

fn image(size: usize) -> Tensor<f32> {
    gen_clean(3, size).expect("clean image").cast()
}

fn conv(c: &mut Criterion) {
    let x = Tensor::<f32>::from_fn(&[32, 32, 32], |i| (i % 17) as f32 / 17.0);
    let w = Tensor::<f32>::from_fn(&[32, 32, 3, 3], |i| (i % 7) as f32 / 70.0 - 0.05);
    c.bench_function("conv2d 32x32x32 k3 forward+backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let xv = g.leaf(&x);
            let wv = g.leaf(&w);
            let y = g.conv2d(xv, wv, None, 1, 1).unwrap();
            let s = g.sum(y);
            black_box(g.backward(s).unwrap());
        })
    });
}

fn restorer(c: &mut Criterion) {
    let r = Restorer::<f32>::new(RestorerConfig::default(), 0);
    let x = image(32);
    c.bench_function("restorer inference 32x32", |b| b.iter(|| black_box(r.infer(&x).unwrap())));
    c.bench_function("restorer forward+backward 32x32", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let bound = r.params().bind(&mut g, true);
            let xv = g.leaf(&x);
            let out = r.forward(&mut g, &bound, xv, None).unwrap().output;
            let loss = g.mean(out);
            black_box(g.backward(loss).unwrap());
        })
    });
}

fn adasam(c: &mut Criterion) {
    let a = AdaSam::<f32>::new(AdaSamConfig::default(), 0).unwrap();
    let x = image(32);
    c.bench_function("adasam token scores 32x32", |b| b.iter(|| black_box(a.scores(&x).unwrap())));
}

criterion_group!(benches, conv, restorer, adasam);
criterion_main!(benches);
