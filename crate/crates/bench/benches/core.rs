use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use wordalign::aligner::{align_pair, AlignOptions, Direction, TokenizedPair};
use wordalign::corpus::{tokenize, GoldAlignment, Link};
use wordalign::encoder::{forward, loss_and_grad, LabeledInput, ModelConfig, Parameters};
use wordalign::metrics::evaluate_corpus;
use wordalign_bench::fixture;

fn encoder(c: &mut Criterion) {
    let (corpus, vocab) = fixture(50);
    let params = Parameters::<f32>::init(&ModelConfig::with_vocab_size(vocab.len()), 0).unwrap();
    let pair = TokenizedPair::new(&corpus[0], &vocab);
    let input = pair.encode(Direction::Forward, 0, 256).unwrap();
    let labels = vec![false; input.n_targets()];
    c.bench_function("forward", |b| b.iter(|| forward(black_box(&input), &params).unwrap()));
    c.bench_function("loss_and_grad", |b| {
        let batch = [LabeledInput { input: &input, labels: &labels }];
        b.iter(|| loss_and_grad(black_box(&batch), &params).unwrap())
    });
    c.bench_function("align_pair", |b| {
        b.iter(|| align_pair(black_box(&corpus[0]), &vocab, &params, &AlignOptions::default()).unwrap())
    });
}

fn tokenizer(c: &mut Criterion) {
    let (corpus, vocab) = fixture(200);
    c.bench_function("tokenize_200_sentences", |b| {
        b.iter(|| {
            for p in &corpus {
                black_box(tokenize(&p.source, &vocab));
                black_box(tokenize(&p.target, &vocab));
            }
        })
    });
}

fn metrics(c: &mut Criterion) {
    let (corpus, _) = fixture(2000);
    let golds: Vec<GoldAlignment> = corpus.iter().map(|p| p.gold().unwrap().clone()).collect();
    let hyps: Vec<BTreeSet<Link>> = golds.iter().map(|g| g.sure().iter().skip(1).copied().collect()).collect();
    c.bench_function("evaluate_2000_pairs", |b| b.iter(|| evaluate_corpus(black_box(&hyps), &golds).unwrap()));
}

criterion_group!(benches, encoder, tokenizer, metrics);
criterion_main!(benches);
