//! Shared inputs for the benchmarks.

use wordalign::corpus::{train_subword_vocab, SentencePair, SubwordVocabulary};
use wordalign::synth::{generate, SynthSpec};

/// A small synthetic corpus and a vocabulary trained on it.
pub fn fixture(n_sentences: usize) -> (Vec<SentencePair>, SubwordVocabulary) {
    let corpus = generate(&SynthSpec {
        n_sentences,
        ..Default::default()
    })
    .expect("default spec is valid");
    let vocab = train_subword_vocab(&corpus, 600).expect("corpus covers the alphabet");
    (corpus, vocab)
}
