//! Labels, training examples and the mini-batch Adam loop.
//!
//! Every word of every sentence pair yields one example per direction: the
//! word is marked and each token of the other sentence gets label 1 iff its
//! word is sure-aligned to the marked word. Possible-only links are negatives.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aligner::{align_corpus, AlignOptions, Direction, TokenizedPair};
use crate::corpus::{GoldAlignment, SentencePair};
use crate::encoder::{
    adam_step, bce, forward, loss_and_grad, loss_and_grad_with_dropout, AdamConfig, AdamState, Checkpoint,
    EncodedInput, LabeledInput, Parameters,
};
use crate::error::{Error, Result};
use crate::metrics::evaluate_corpus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Decision threshold used when scoring the validation set.
    pub threshold: f64,
    pub seed: u64,
    /// Train on a random subset of this many sentence pairs.
    pub few_shot_k: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-3,
            batch_size: 8,
            epochs: 5,
            threshold: 0.5,
            seed: 0,
            few_shot_k: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} is outside (0, 1)", self.threshold)));
        }
        if self.few_shot_k == Some(0) {
            return Err(Error::Config("few_shot_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleOrigin {
    pub pair: usize,
    pub direction: Direction,
    pub word: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub encoded: EncodedInput,
    /// One label per token of the unmarked sentence.
    pub labels: Vec<bool>,
    pub origin: ExampleOrigin,
}

impl TrainingExample {
    pub fn as_labeled(&self) -> LabeledInput<'_> {
        LabeledInput {
            input: &self.encoded,
            labels: &self.labels,
        }
    }
}

/// Token labels of the unmarked side for `word` of the marked side.
pub fn derive_labels(pair: &TokenizedPair, gold: &GoldAlignment, direction: Direction, word: usize) -> Result<Vec<bool>> {
    let (marked, other) = pair.sides(direction);
    if word >= marked.n_words() {
        return Err(Error::WordIndex {
            index: word,
            len: marked.n_words(),
        });
    }
    Ok(other
        .tokens
        .word_index
        .iter()
        .map(|&o| gold.is_sure(direction.link(word, o)))
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct ExampleSet {
    pub examples: Vec<TrainingExample>,
    /// Queries dropped because the encoded pair exceeded `max_len`.
    pub skipped: usize,
}

/// One example per source word (forward) and per target word (reverse), in
/// corpus order.
pub fn build_examples(corpus: &[SentencePair], vocab: &crate::corpus::SubwordVocabulary, max_len: usize) -> Result<ExampleSet> {
    let per_pair: Vec<Result<(Vec<TrainingExample>, usize)>> = corpus
        .par_iter()
        .enumerate()
        .map(|(p, pair)| {
            let gold = pair.gold().ok_or(Error::MissingGold(p))?;
            let tp = TokenizedPair::new(pair, vocab);
            let mut out = Vec::new();
            let mut skipped = 0;
            for direction in [Direction::Forward, Direction::Reverse] {
                for word in 0..tp.sides(direction).0.n_words() {
                    let encoded = match tp.encode(direction, word, max_len) {
                        Ok(e) => e,
                        Err(Error::SequenceTooLong { .. }) => {
                            skipped += 1;
                            continue;
                        }
                        Err(e) => return Err(e),
                    };
                    out.push(TrainingExample {
                        encoded,
                        labels: derive_labels(&tp, gold, direction, word)?,
                        origin: ExampleOrigin { pair: p, direction, word },
                    });
                }
            }
            Ok((out, skipped))
        })
        .collect();
    let mut set = ExampleSet::default();
    for r in per_pair {
        let (ex, skipped) = r?;
        set.examples.extend(ex);
        set.skipped += skipped;
    }
    if set.skipped > 0 {
        log::warn!("skipped {} queries longer than max_len {max_len}", set.skipped);
    }
    Ok(set)
}

/// `k` sentence pairs drawn uniformly without replacement, in corpus order.
pub fn few_shot_subset(corpus: &[SentencePair], k: usize, seed: u64) -> Result<Vec<SentencePair>> {
    if k > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "few-shot size {k} exceeds the corpus size {}",
            corpus.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, corpus.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| corpus[i].clone()).collect())
}

/// Mean token-level binary cross-entropy of `params` on `examples`.
pub fn mean_loss(examples: &[TrainingExample], params: &Parameters<f32>) -> Result<f64> {
    let sums: Vec<Result<(f64, usize)>> = examples
        .par_iter()
        .map(|ex| {
            let z = forward(&ex.encoded, params)?;
            Ok((z.iter().zip(&ex.labels).map(|(&z, &a)| bce(z as f64, a).0).sum(), z.len()))
        })
        .collect();
    let (mut total, mut n) = (0.0, 0usize);
    for s in sums {
        let (l, k) = s?;
        total += l;
        n += k;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no target tokens to score".into()));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_aer: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: Checkpoint,
    /// Lowest validation AER; the final checkpoint when there is no validation set.
    pub best_checkpoint: Checkpoint,
    pub best_epoch: Option<usize>,
    pub log: Vec<EpochLog>,
    pub skipped: usize,
}

fn validation_aer(val: &[SentencePair], checkpoint: &Checkpoint, threshold: f64) -> Result<f64> {
    let opts = AlignOptions {
        threshold,
        ..Default::default()
    };
    let hyps = align_corpus(val, checkpoint, &opts)
        .into_iter()
        .map(|h| h.map(|h| h.pairs))
        .collect::<Result<Vec<_>>>()?;
    let golds = val
        .iter()
        .enumerate()
        .map(|(i, p)| p.gold().cloned().ok_or(Error::MissingGold(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_corpus(&hyps, &golds)?.aer)
}

/// Shuffled mini-batch Adam on the mean token BCE, starting from `init`.
/// `on_epoch` sees each epoch's log entry as soon as it is available.
pub fn train(
    corpus: &[SentencePair],
    val: Option<&[SentencePair]>,
    cfg: &TrainConfig,
    init: Checkpoint,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let subset;
    let corpus = match cfg.few_shot_k {
        Some(k) => {
            subset = few_shot_subset(corpus, k, cfg.seed)?;
            &subset[..]
        }
        None => corpus,
    };
    let max_len = init.config().max_len;
    let set = build_examples(corpus, &init.vocab, max_len)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            final_checkpoint: init.clone(),
            best_checkpoint: init,
            best_epoch: None,
            log: Vec::new(),
            skipped: set.skipped,
        });
    }
    if set.examples.is_empty() {
        return Err(Error::InvalidArgument("no training examples".into()));
    }

    let adam = AdamConfig::with_lr(cfg.lr);
    let dropout = init.config().dropout_rate > 0.0;
    let mut ckpt = init;
    let mut state = AdamState::new(&ckpt.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..set.examples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Checkpoint)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<LabeledInput> = chunk.iter().map(|&i| set.examples[i].as_labeled()).collect();
            let dropout_seed: u64 = rng.random();
            let (loss, grads) = if dropout {
                loss_and_grad_with_dropout(&batch, &ckpt.params, dropout_seed)?
            } else {
                loss_and_grad(&batch, &ckpt.params)?
            };
            let loss = loss as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            adam_step(&mut ckpt.params, &grads, &mut state, &adam)?;
            loss_sum += loss;
            n_batches += 1;
        }
        ckpt.meta.epochs_seen += 1;
        ckpt.meta.seed = cfg.seed;
        let val_aer = match val {
            Some(v) if !v.is_empty() => Some(validation_aer(v, &ckpt, cfg.threshold)?),
            _ => None,
        };
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / n_batches as f64,
            val_aer,
        };
        on_epoch(&entry);
        log.push(entry);
        if let Some(aer) = val_aer {
            if best.as_ref().is_none_or(|(b, _, _)| aer < *b) {
                best = Some((aer, epoch, ckpt.clone()));
            }
        }
    }
    let (best_epoch, best_checkpoint) = match best {
        Some((_, e, c)) => (Some(e), c),
        None => (Some(cfg.epochs), ckpt.clone()),
    };
    Ok(TrainOutcome {
        final_checkpoint: ckpt,
        best_checkpoint,
        best_epoch,
        log,
        skipped: set.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{train_subword_vocab, SubwordVocabulary, WordSequence};
    use crate::encoder::ModelConfig;

    fn pair(src: &str, tgt: &str, sure: &[(usize, usize)], possible: &[(usize, usize)]) -> SentencePair {
        SentencePair::new(
            WordSequence::parse(src),
            WordSequence::parse(tgt),
            Some(GoldAlignment::new(sure.iter().copied(), possible.iter().copied())),
        )
        .unwrap()
    }

    fn corpus() -> Vec<SentencePair> {
        vec![
            pair("la maison bleue", "the blue house", &[(0, 0), (1, 2), (2, 1)], &[]),
            pair("la fleur", "the flower", &[(0, 0), (1, 1)], &[]),
            pair("une maison", "a house", &[(0, 0), (1, 1)], &[(0, 1)]),
        ]
    }

    fn vocab(c: &[SentencePair], size: usize) -> SubwordVocabulary {
        train_subword_vocab(c, size).unwrap()
    }

    fn tiny_config(vocab: &SubwordVocabulary) -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            ffn_dim: 16,
            max_len: 64,
            vocab_size: vocab.len(),
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn labels_mark_every_token_of_the_aligned_word() {
        let p = pair("a b", "x yyyy z", &[(0, 1)], &[]);
        // Small vocabulary, so "yyyy" splits into several tokens.
        let v = vocab(std::slice::from_ref(&p), 14);
        let tp = TokenizedPair::new(&p, &v);
        let labels = derive_labels(&tp, p.gold().unwrap(), Direction::Forward, 0).unwrap();
        let span = tp.target.map.span(1).unwrap();
        assert!(span.len() >= 2);
        for (k, &l) in labels.iter().enumerate() {
            assert_eq!(l, span.contains(&k), "token {k}");
        }
        let none = derive_labels(&tp, p.gold().unwrap(), Direction::Forward, 1).unwrap();
        assert!(none.iter().all(|&l| !l));
        assert!(derive_labels(&tp, p.gold().unwrap(), Direction::Forward, 2).is_err());
    }

    #[test]
    fn possible_only_links_are_negative() {
        let c = corpus();
        let v = vocab(&c, 60);
        let tp = TokenizedPair::new(&c[2], &v);
        let labels = derive_labels(&tp, c[2].gold().unwrap(), Direction::Forward, 0).unwrap();
        let house = tp.target.map.span(1).unwrap();
        assert!(house.into_iter().all(|k| !labels[k]));
    }

    #[test]
    fn labels_agree_across_directions() {
        let c = corpus();
        let v = vocab(&c, 60);
        for p in &c {
            let tp = TokenizedPair::new(p, &v);
            let g = p.gold().unwrap();
            for i in 0..p.source.len() {
                let fwd = derive_labels(&tp, g, Direction::Forward, i).unwrap();
                for j in 0..p.target.len() {
                    let rev = derive_labels(&tp, g, Direction::Reverse, j).unwrap();
                    let f = fwd[tp.target.map.span(j).unwrap().start];
                    let r = rev[tp.source.map.span(i).unwrap().start];
                    assert_eq!(f, r);
                }
            }
        }
    }

    #[test]
    fn example_count_is_sum_of_lengths() {
        let c = corpus();
        let v = vocab(&c, 60);
        let set = build_examples(&c, &v, 64).unwrap();
        assert_eq!(set.examples.len(), (3 + 3) + (2 + 2) + (2 + 2));
        assert_eq!(set.skipped, 0);
        assert!(build_examples(&[], &v, 64).unwrap().examples.is_empty());
        for ex in &set.examples {
            assert_eq!(ex.labels.len(), ex.encoded.n_targets());
        }
    }

    #[test]
    fn overlong_queries_are_skipped() {
        let c = corpus();
        let v = vocab(&c, 60);
        let set = build_examples(&c, &v, 9).unwrap();
        assert!(set.skipped > 0);
        assert_eq!(set.examples.len() + set.skipped, 14);
    }

    #[test]
    fn missing_gold_is_an_error() {
        let c = vec![corpus()[0].without_gold()];
        let v = vocab(&corpus(), 60);
        assert!(matches!(build_examples(&c, &v, 64), Err(Error::MissingGold(0))));
    }

    #[test]
    fn few_shot_subsets() {
        let c: Vec<SentencePair> = (0..100).map(|i| pair(&format!("s{i}"), "t", &[(0, 0)], &[])).collect();
        assert_eq!(few_shot_subset(&c, 100, 3).unwrap(), c);
        let a = few_shot_subset(&c, 32, 7).unwrap();
        assert_eq!(a, few_shot_subset(&c, 32, 7).unwrap());
        assert_eq!(a.len(), 32);
        let distinct: std::collections::BTreeSet<&str> = a.iter().map(|p| p.source.raw()).collect();
        assert_eq!(distinct.len(), 32);
        assert!(few_shot_subset(&c, 101, 0).is_err());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let c = corpus();
        let v = vocab(&c, 60);
        let init = Checkpoint::fresh(tiny_config(&v), v, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(&c, None, &cfg, init.clone(), |_| {}).unwrap();
        assert_eq!(out.final_checkpoint, init);
        assert_eq!(out.best_checkpoint, init);
        assert!(out.log.is_empty());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let c = corpus();
        let v = vocab(&c, 60);
        let init = Checkpoint::fresh(tiny_config(&v), v, 1).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            epochs: 2,
            ..Default::default()
        };
        let out = train(&c, None, &cfg, init.clone(), |_| {}).unwrap();
        assert_eq!(out.final_checkpoint.params, init.params);
        assert_eq!(out.final_checkpoint.meta.epochs_seen, 2);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let c = corpus();
        let v = vocab(&c, 60);
        let init = Checkpoint::fresh(tiny_config(&v), v.clone(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 4,
            ..Default::default()
        };
        let mut seen = Vec::new();
        let a = train(&c, Some(&c), &cfg, init.clone(), |e| seen.push(e.epoch)).unwrap();
        let b = train(&c, Some(&c), &cfg, init.clone(), |_| {}).unwrap();
        assert_eq!(seen, (1..=10).collect::<Vec<_>>());
        assert_eq!(a.final_checkpoint, b.final_checkpoint);
        assert!(a.log.iter().all(|e| e.val_aer.is_some()));
        let examples = build_examples(&c, &v, 64).unwrap().examples;
        let before = mean_loss(&examples, &init.params).unwrap();
        let after = mean_loss(&examples, &a.final_checkpoint.params).unwrap();
        assert!(after < before, "{after} >= {before}");
        let best = a.best_epoch.unwrap();
        let best_aer = a.log[best - 1].val_aer.unwrap();
        assert!(a.log.iter().all(|e| e.val_aer.unwrap() >= best_aer));
    }

    #[test]
    fn invalid_config_is_rejected() {
        for cfg in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { threshold: 1.0, ..Default::default() },
            TrainConfig { lr: f64::NAN, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn log_lines_are_json() {
        let e = EpochLog {
            epoch: 1,
            mean_loss: 0.5,
            val_aer: None,
        };
        assert_eq!(serde_json::to_string(&e).unwrap(), r#"{"epoch":1,"mean_loss":0.5}"#);
    }
}
