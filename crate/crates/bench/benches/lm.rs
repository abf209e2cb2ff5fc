use aoa_bench::text;
use aoa_core::ngram::{cluster_exchange, KnModel};
use criterion::{criterion_group, criterion_main, Criterion};

fn kneser_ney(c: &mut Criterion) {
    let corpus = text(20_000, 500, 1);
    let held_out = text(2_000, 500, 2);
    c.bench_function("kn train order 8, 20k tokens", |b| b.iter(|| KnModel::train(&corpus, 8).unwrap()));
    let lm = KnModel::train(&corpus, 8).unwrap();
    c.bench_function("kn score 2k tokens", |b| b.iter(|| lm.score_sentences(&held_out)));
}

fn clustering(c: &mut Criterion) {
    let corpus = text(20_000, 500, 3);
    let mut group = c.benchmark_group("exchange");
    group.sample_size(10);
    group.bench_function("50 classes, 3 passes, 20k tokens", |b| b.iter(|| cluster_exchange(&corpus, 50, 3).unwrap()));
    group.finish();
}

criterion_group!(benches, kneser_ney, clustering);
criterion_main!(benches);
