use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use expanet_core::synthetic::{expansion_corpus, ExpansionTaskSpec};
use expanet_core::train::build_examples;

fn bench_retrieval(c: &mut Criterion) {
    let data = expansion_corpus(&ExpansionTaskSpec::default(), 7)
        .build(15, 100)
        .expect("synthetic corpus encodes");
    c.bench_function("retrieve_top20", |b| {
        b.iter(|| {
            for t in &data.texts {
                black_box(data.index.retrieve_topk(t.tokens(), 20, None));
            }
        })
    });
    c.bench_function("build_examples_k20", |b| {
        b.iter(|| black_box(build_examples(&data.texts, &data.index, 20, 0, false)))
    });
}

criterion_group!(benches, bench_retrieval);
criterion_main!(benches);
