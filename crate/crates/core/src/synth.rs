//! Synthetic parallel corpora with exact gold alignments.
//!
//! All corpora share one target language. A source language is defined by
//! `dict_seed`, which fixes both its word forms and its dictionary into the
//! target vocabulary, so two specs that differ only in `dict_seed` give two
//! language pairs with a common target side.
//!
//! Each source word is translated as one target word, as two adjacent target
//! words (fertility), as two separated target words (non-contiguous), or not
//! at all (drop). Target words are then locally reordered and spurious target
//! words with no source counterpart are inserted. Gold links are recorded as
//! sure, so `S == P`.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{GoldAlignment, Link, SentencePair, WordSequence};
use crate::error::{Error, Result};

const SOURCE_CONSONANTS: [char; 5] = ['b', 'd', 'k', 'm', 's'];
const SOURCE_VOWELS: [char; 4] = ['a', 'e', 'i', 'o'];
const TARGET_CONSONANTS: [char; 5] = ['f', 'g', 'l', 'n', 't'];
const TARGET_VOWELS: [char; 4] = ['a', 'u', 'y', 'e'];
const TARGET_LANGUAGE_SEED: u64 = 0x007a_110f_5eed;
/// Upper bound on `vocab_size`; keeps every word list well inside the space
/// of two- and three-syllable forms.
pub const MAX_VOCAB: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Number of source word types.
    pub vocab_size: usize,
    /// Selects the source language: word forms and dictionary.
    pub dict_seed: u64,
    pub fertility_rate: f64,
    pub noncontig_rate: f64,
    pub drop_rate: f64,
    pub insert_rate: f64,
    pub shuffle_window: usize,
    pub n_sentences: usize,
    /// Inclusive range of source sentence lengths.
    pub len_range: (usize, usize),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 200,
            dict_seed: 0,
            fertility_rate: 0.1,
            noncontig_rate: 0.05,
            drop_rate: 0.1,
            insert_rate: 0.05,
            shuffle_window: 3,
            n_sentences: 2000,
            len_range: (4, 9),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("fertility_rate", self.fertility_rate),
            ("noncontig_rate", self.noncontig_rate),
            ("drop_rate", self.drop_rate),
            ("insert_rate", self.insert_rate),
        ];
        for (name, r) in rates {
            if !(0.0..=0.5).contains(&r) {
                return Err(Error::Config(format!("{name} {r} is outside [0, 0.5]")));
            }
        }
        let sum: f64 = rates.iter().map(|(_, r)| r).sum();
        if sum > 0.9 {
            return Err(Error::Config(format!("rates sum to {sum}, above 0.9")));
        }
        if self.vocab_size == 0 || self.vocab_size > MAX_VOCAB {
            return Err(Error::Config(format!(
                "vocab_size {} is outside 1..={MAX_VOCAB}",
                self.vocab_size
            )));
        }
        let (lo, hi) = self.len_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("len_range ({lo}, {hi}) must satisfy 1 <= min <= max")));
        }
        Ok(())
    }
}

/// Category counts read back from the generated gold alignments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedCounts {
    pub sentences: usize,
    pub source_words: usize,
    pub target_words: usize,
    pub links: usize,
    /// Source words with no link.
    pub dropped: usize,
    pub one_to_one: usize,
    /// Source words linked to two or more adjacent target words.
    pub contiguous_one_to_many: usize,
    /// Source words linked to two or more target words that are not one run.
    pub non_contiguous_one_to_many: usize,
    /// Target words with no link.
    pub inserted: usize,
}

impl RealizedCounts {
    pub fn from_corpus(pairs: &[SentencePair]) -> Self {
        let mut c = RealizedCounts {
            sentences: pairs.len(),
            ..Default::default()
        };
        for p in pairs {
            let (n, m) = (p.source.len(), p.target.len());
            c.source_words += n;
            c.target_words += m;
            let sure = p.gold().map(|g| g.sure().clone()).unwrap_or_default();
            c.links += sure.len();
            let mut by_src = vec![Vec::new(); n];
            let mut tgt_linked = vec![false; m];
            for &(i, j) in &sure {
                by_src[i].push(j);
                tgt_linked[j] = true;
            }
            for js in &by_src {
                match js.len() {
                    0 => c.dropped += 1,
                    1 => c.one_to_one += 1,
                    k if js[k - 1] - js[0] + 1 == k => c.contiguous_one_to_many += 1,
                    _ => c.non_contiguous_one_to_many += 1,
                }
            }
            c.inserted += tgt_linked.iter().filter(|&&l| !l).count();
        }
        c
    }

    pub fn rate(count: usize, total: usize) -> f64 {
        if total == 0 {
            0.0
        } else {
            count as f64 / total as f64
        }
    }
}

/// Written next to a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub realized: RealizedCounts,
}

/// Word lists and dictionary of one language pair.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub source: Vec<String>,
    /// Main translation of each source word.
    pub primary: Vec<String>,
    /// Second target word used by fertile and non-contiguous translations.
    pub secondary: Vec<String>,
    /// Target words that never translate anything.
    pub spurious: Vec<String>,
}

fn word_forms(rng: &mut ChaCha8Rng, consonants: &[char], vowels: &[char], count: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .flat_map(|_| {
                [
                    consonants[rng.random_range(0..consonants.len())],
                    vowels[rng.random_range(0..vowels.len())],
                ]
            })
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl Lexicon {
    pub fn new(vocab_size: usize, dict_seed: u64) -> Self {
        let n_spurious = (vocab_size / 4).max(1);
        let mut trng = ChaCha8Rng::seed_from_u64(TARGET_LANGUAGE_SEED);
        let mut target = word_forms(&mut trng, &TARGET_CONSONANTS, &TARGET_VOWELS, 2 * vocab_size + n_spurious);
        let spurious = target.split_off(2 * vocab_size);
        let secondary = target.split_off(vocab_size);
        let mut primary = target;

        let mut srng = ChaCha8Rng::seed_from_u64(dict_seed);
        let source = word_forms(&mut srng, &SOURCE_CONSONANTS, &SOURCE_VOWELS, vocab_size);
        let mut perm: Vec<usize> = (0..vocab_size).collect();
        perm.shuffle(&mut srng);
        primary = perm.iter().map(|&k| primary[k].clone()).collect();
        let secondary = perm.iter().map(|&k| secondary[k].clone()).collect();
        Lexicon {
            source,
            primary,
            secondary,
            spurious,
        }
    }
}

struct Slot {
    word: String,
    source: Option<usize>,
    /// The gap after this slot must stay closed.
    glued: bool,
}

fn open_gaps(target: &[Slot]) -> Vec<usize> {
    (0..=target.len())
        .filter(|&g| g == 0 || g == target.len() || !target[g - 1].glued)
        .collect()
}

fn insert_at(target: &mut Vec<Slot>, gap: usize, word: String, source: Option<usize>) {
    target.insert(
        gap,
        Slot {
            word,
            source,
            glued: false,
        },
    );
}

fn sentence(spec: &SynthSpec, lex: &Lexicon, zipf: &WeightedIndex<f64>, index: usize) -> Result<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = rng.random_range(spec.len_range.0..=spec.len_range.1);
    let words: Vec<usize> = (0..n).map(|_| zipf.sample(&mut rng)).collect();

    // Translation units in source order, each with a reordering key.
    let mut units: Vec<(f64, Vec<Slot>)> = Vec::new();
    let mut separated: Vec<usize> = Vec::new();
    let c1 = spec.fertility_rate;
    let c2 = c1 + spec.noncontig_rate;
    let c3 = c2 + spec.drop_rate;
    for (i, &w) in words.iter().enumerate() {
        let u: f64 = rng.random();
        let key = i as f64 + rng.random::<f64>() * spec.shuffle_window as f64;
        let slot = |word: &String, glued| Slot {
            word: word.clone(),
            source: Some(i),
            glued,
        };
        if u < c1 {
            units.push((key, vec![slot(&lex.primary[w], true), slot(&lex.secondary[w], false)]));
        } else if u < c2 {
            units.push((key, vec![slot(&lex.primary[w], false)]));
            separated.push(i);
        } else if u >= c3 {
            units.push((key, vec![slot(&lex.primary[w], false)]));
        }
    }
    units.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut target: Vec<Slot> = units.into_iter().flat_map(|(_, s)| s).collect();

    // Second words of non-contiguous translations go to a gap that does not
    // touch the first word.
    for i in separated {
        let p = target.iter().position(|s| s.source == Some(i)).expect("placed above");
        let gaps: Vec<usize> = open_gaps(&target).into_iter().filter(|&g| g != p && g != p + 1).collect();
        let gap = if gaps.is_empty() {
            let filler = lex.spurious[rng.random_range(0..lex.spurious.len())].clone();
            insert_at(&mut target, p + 1, filler, None);
            p + 2
        } else {
            gaps[rng.random_range(0..gaps.len())]
        };
        insert_at(&mut target, gap, lex.secondary[words[i]].clone(), Some(i));
    }

    let base = target.len();
    for _ in 0..base {
        if rng.random_bool(spec.insert_rate) {
            let gaps = open_gaps(&target);
            let gap = gaps[rng.random_range(0..gaps.len())];
            let filler = lex.spurious[rng.random_range(0..lex.spurious.len())].clone();
            insert_at(&mut target, gap, filler, None);
        }
    }
    if target.is_empty() {
        let filler = lex.spurious[rng.random_range(0..lex.spurious.len())].clone();
        insert_at(&mut target, 0, filler, None);
    }

    let links: Vec<Link> = target
        .iter()
        .enumerate()
        .filter_map(|(j, s)| s.source.map(|i| (i, j)))
        .collect();
    let source = WordSequence::from_words(words.iter().map(|&w| lex.source[w].clone()))?;
    let target = WordSequence::from_words(target.into_iter().map(|s| s.word))?;
    SentencePair::new(source, target, Some(GoldAlignment::from_sure(links)))
}

/// Generates `spec.n_sentences` sentence pairs, deterministically in `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SentencePair>> {
    spec.validate()?;
    let lex = Lexicon::new(spec.vocab_size, spec.dict_seed);
    let zipf = WeightedIndex::new((1..=spec.vocab_size).map(|r| 1.0 / r as f64))
        .map_err(|e| Error::Config(e.to_string()))?;
    (0..spec.n_sentences)
        .into_par_iter()
        .map(|i| sentence(spec, &lex, &zipf, i))
        .collect()
}

/// Generates a corpus and its manifest.
pub fn generate_with_manifest(spec: &SynthSpec) -> Result<(Vec<SentencePair>, SynthManifest)> {
    let pairs = generate(spec)?;
    let manifest = SynthManifest {
        spec: spec.clone(),
        realized: RealizedCounts::from_corpus(&pairs),
    };
    Ok((pairs, manifest))
}
