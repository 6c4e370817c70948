use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use vmtlab_bench::sentence_pairs;
use vmtlab_core::metrics::{bleu_corpus, term_edit_rate, TerConfig};

fn ter(c: &mut Criterion) {
    let cfg = TerConfig::default();
    let mut group = c.benchmark_group("term_edit_rate");
    for len in [6, 20, 40] {
        let pairs = sentence_pairs(16, len);
        let terms: BTreeSet<usize> = [0, len / 2].into_iter().collect();
        group.bench_with_input(BenchmarkId::from_parameter(len), &pairs, |b, pairs| {
            b.iter(|| {
                for (h, r) in pairs {
                    black_box(term_edit_rate(h, r, &terms, &cfg).unwrap());
                }
            })
        });
    }
    group.finish();
}

fn bleu(c: &mut Criterion) {
    let pairs = sentence_pairs(1000, 25);
    let hyps: Vec<&[String]> = pairs.iter().map(|(h, _)| h.as_slice()).collect();
    let refs: Vec<&[String]> = pairs.iter().map(|(_, r)| r.as_slice()).collect();
    c.bench_function("bleu_corpus/1000x25", |b| b.iter(|| black_box(bleu_corpus(&hyps, &refs).unwrap())));
}

criterion_group!(benches, ter, bleu);
criterion_main!(benches);
