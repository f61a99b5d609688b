use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sharenet_core::nn::{init, BiLstm, Ctx, InitScheme};
use sharenet_core::tasks::{mst_decode, ModelDims, System, TaggerModel, Vocabs};
use sharenet_core::verify::toy_sentence;
use sharenet_core::{ParamStore, Tape};

fn mst(c: &mut Criterion) {
    let mut g = c.benchmark_group("mst_decode");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [10, 25, 50] {
        let scores = init::normal(&[n, n + 1], 1.0, &mut rng);
        g.bench_with_input(BenchmarkId::from_parameter(n), &scores, |b, s| b.iter(|| mst_decode(black_box(s)).unwrap()));
    }
    g.finish();
}

fn bilstm(c: &mut Criterion) {
    let mut g = c.benchmark_group("bilstm_fwd_bwd");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params = ParamStore::new();
    let layer = BiLstm::new(&mut params, "b", 32, 32, InitScheme::default(), &mut rng);
    for n in [10, 30] {
        let x = init::normal(&[n, 32], 1.0, &mut rng);
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.input(x.clone());
                let h = layer.forward(&mut tape, &params, xv, &mut Ctx::eval()).unwrap();
                let loss = tape.sum(h).unwrap();
                tape.backward(loss, &mut params).unwrap();
            })
        });
    }
    g.finish();
}

fn tagger_predict(c: &mut Criterion) {
    let s = toy_sentence();
    for system in [System::Fsn, System::Psn, System::Lws] {
        let m = TaggerModel::new(system, ModelDims::default(), Vocabs::build([&s], &[]), 3).unwrap();
        c.bench_function(&format!("tagger_predict/{system}"), |b| b.iter(|| m.predict(black_box(&s)).unwrap()));
    }
}

criterion_group!(benches, mst, bilstm, tagger_predict);
criterion_main!(benches);
