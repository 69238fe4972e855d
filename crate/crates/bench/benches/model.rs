use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use expanet_core::model::{backward, forward};
use expanet_core::numerics::seeded_rng;
use expanet_core::synthetic::{expansion_corpus, ExpansionTaskSpec};
use expanet_core::train::build_examples;
use expanet_core::{AttentionMode, ModelParameters};

fn bench_model(c: &mut Criterion) {
    let data = expansion_corpus(&ExpansionTaskSpec::default(), 7)
        .build(15, 100)
        .expect("synthetic corpus encodes");
    let examples = build_examples(&data.texts[..64], &data.index, 20, 0, false);
    let mut rng = seeded_rng(1);
    let params = ModelParameters::init(data.index.vocab().len(), 100, data.labels.len(), 0.1, &mut rng);

    let mut group = c.benchmark_group("forward_backward");
    for (name, mode) in [("soft", AttentionMode::Soft), ("hard", AttentionMode::hard())] {
        for hops in [1, 3] {
            group.bench_with_input(BenchmarkId::new(name, hops), &hops, |b, &hops| {
                let mut rng = seeded_rng(2);
                b.iter(|| {
                    for ex in &examples {
                        let trace = forward(&params, &ex.input, mode, hops, &mut rng).unwrap();
                        let label = ex.label.unwrap();
                        black_box(backward(&trace, &ex.input, label, &params, mode).unwrap());
                    }
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_model);
criterion_main!(benches);
