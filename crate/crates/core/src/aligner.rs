//! Word-level scoring, symmetrization and threshold decoding.
//!
//! For a query word on one side, the encoder yields a probability per token of
//! the other side; these are aggregated over each word's token span to give a
//! word-to-word probability. Doing this for every word in both directions
//! yields two score matrices, which are merged into one set of links.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Link, SentencePair, SubwordTokenization, SubwordVocabulary, WordTokenMap};
use crate::encoder::{encode_pair, forward, sigmoid, Checkpoint, EncodedInput, Parameters, Real};
use crate::error::{Error, Result};

/// Which side is marked. `Forward` marks a source word and scores target
/// tokens; `Reverse` marks a target word and scores source tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }

    /// Orients a (marked word, other word) pair as (source, target).
    pub fn link(self, marked: usize, other: usize) -> Link {
        match self {
            Direction::Forward => (marked, other),
            Direction::Reverse => (other, marked),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TokenizedSentence {
    pub tokens: SubwordTokenization,
    pub map: WordTokenMap,
}

impl TokenizedSentence {
    pub fn n_words(&self) -> usize {
        self.map.n_words()
    }
}

#[derive(Debug, Clone)]
pub struct TokenizedPair {
    pub source: TokenizedSentence,
    pub target: TokenizedSentence,
}

impl TokenizedPair {
    pub fn new(pair: &SentencePair, vocab: &SubwordVocabulary) -> Self {
        let (tokens, map) = tokenize(&pair.source, vocab);
        let source = TokenizedSentence { tokens, map };
        let (tokens, map) = tokenize(&pair.target, vocab);
        let target = TokenizedSentence { tokens, map };
        TokenizedPair { source, target }
    }

    /// (marked side, other side) for a direction.
    pub fn sides(&self, direction: Direction) -> (&TokenizedSentence, &TokenizedSentence) {
        match direction {
            Direction::Forward => (&self.source, &self.target),
            Direction::Reverse => (&self.target, &self.source),
        }
    }

    /// Encoder input querying `word` of the marked side.
    pub fn encode(&self, direction: Direction, word: usize, max_len: usize) -> Result<EncodedInput> {
        let (marked, other) = self.sides(direction);
        encode_pair(&marked.tokens, &marked.map, word, &other.tokens, max_len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationKind {
    #[default]
    Max,
    Mean,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymmetrizationKind {
    ForwardOnly,
    ReverseOnly,
    #[default]
    ProbAverage,
    Intersection,
    Union,
    BidiAverage,
}

impl SymmetrizationKind {
    pub const ALL: [SymmetrizationKind; 6] = [
        SymmetrizationKind::ForwardOnly,
        SymmetrizationKind::ReverseOnly,
        SymmetrizationKind::ProbAverage,
        SymmetrizationKind::Intersection,
        SymmetrizationKind::Union,
        SymmetrizationKind::BidiAverage,
    ];

    /// Command-line spelling.
    pub fn flag(self) -> &'static str {
        match self {
            SymmetrizationKind::ForwardOnly => "forward",
            SymmetrizationKind::ReverseOnly => "reverse",
            SymmetrizationKind::ProbAverage => "avg",
            SymmetrizationKind::Intersection => "intersection",
            SymmetrizationKind::Union => "union",
            SymmetrizationKind::BidiAverage => "bidi-avg",
        }
    }
}

impl fmt::Display for SymmetrizationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for SymmetrizationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.flag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown symmetrization {s:?}")))
    }
}

impl AggregationKind {
    pub fn flag(self) -> &'static str {
        match self {
            AggregationKind::Max => "max",
            AggregationKind::Mean => "mean",
            AggregationKind::Min => "min",
        }
    }
}

impl fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

impl FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AggregationKind::Max, AggregationKind::Mean, AggregationKind::Min]
            .into_iter()
            .find(|k| k.flag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown aggregation {s:?}")))
    }
}

/// Word-level link probabilities of one direction, always indexed
/// `(source word, target word)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub direction: Direction,
    n_src: usize,
    n_tgt: usize,
    probs: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(direction: Direction, n_src: usize, n_tgt: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_src * n_tgt {
            return Err(Error::Shape(format!(
                "{} scores for a {n_src}x{n_tgt} matrix",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("score {p} outside [0, 1]")));
        }
        Ok(ScoreMatrix {
            direction,
            n_src,
            n_tgt,
            probs,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_src, self.n_tgt)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.n_tgt + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

/// Predicted links, optionally with the score that admitted each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentHypothesis {
    pub pairs: BTreeSet<Link>,
    pub scores: Option<Vec<(Link, f64)>>,
}

impl AlignmentHypothesis {
    pub fn from_links(pairs: impl IntoIterator<Item = Link>) -> Self {
        AlignmentHypothesis {
            pairs: pairs.into_iter().collect(),
            scores: None,
        }
    }

    /// `i-j` tokens in sorted order.
    pub fn to_pharaoh(&self) -> String {
        crate::corpus::format_links(&self.pairs)
    }

    /// `i-j:score` tokens with four decimals.
    pub fn scores_line(&self) -> String {
        self.scores
            .iter()
            .flatten()
            .map(|((i, j), s)| format!("{i}-{j}:{s:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// `σ(z_k)` for every token of the other side, querying `word`.
pub fn token_probs<T: Real>(pair: &TokenizedPair, word: usize, params: &Parameters<T>, direction: Direction) -> Result<Vec<T>> {
    let input = pair.encode(direction, word, params.config().max_len)?;
    Ok(logits_to_probs(forward(&input, params)?))
}

fn logits_to_probs<T: Real>(z: Vec<T>) -> Vec<T> {
    z.into_iter().map(sigmoid).collect()
}

pub fn aggregate_word<T: Real>(probs: &[T], span: std::ops::Range<usize>, agg: AggregationKind) -> Result<T> {
    if span.is_empty() || span.end > probs.len() {
        return Err(Error::InvalidArgument(format!(
            "token span {span:?} is empty or outside {} probabilities",
            probs.len()
        )));
    }
    let vals = &probs[span];
    Ok(match agg {
        AggregationKind::Max => vals.iter().copied().fold(T::neg_infinity(), T::max),
        AggregationKind::Min => vals.iter().copied().fold(T::infinity(), T::min),
        AggregationKind::Mean => vals.iter().copied().sum::<T>() / T::of(vals.len() as f64),
    })
}

/// One encoder pass per word of the marked side.
pub fn score_matrix<T: Real>(
    pair: &TokenizedPair,
    params: &Parameters<T>,
    direction: Direction,
    agg: AggregationKind,
) -> Result<ScoreMatrix> {
    let (marked, other) = pair.sides(direction);
    let (n_src, n_tgt) = (pair.source.n_words(), pair.target.n_words());
    let mut probs = vec![0.0; n_src * n_tgt];
    for w in 0..marked.n_words() {
        let mut query = || -> Result<()> {
            let tp = token_probs(pair, w, params, direction)?;
            for (o, span) in other.map.spans().iter().enumerate() {
                let (i, j) = direction.link(w, o);
                probs[i * n_tgt + j] = aggregate_word(&tp, span.clone(), agg)?.to_f64().unwrap();
            }
            Ok(())
        };
        query().map_err(|e| Error::Query {
            direction: direction.name(),
            word: w,
            source: Box::new(e),
        })?;
    }
    ScoreMatrix::new(direction, n_src, n_tgt, probs)
}

fn check_threshold(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold {tau} is outside (0, 1)")))
    }
}

/// Keeps every entry `≥ tau` of a single matrix.
pub fn threshold_matrix(m: &ScoreMatrix, tau: f64) -> Result<AlignmentHypothesis> {
    check_threshold(tau)?;
    let (n, t) = m.dims();
    let mut pairs = BTreeSet::new();
    let mut scores = Vec::new();
    for i in 0..n {
        for j in 0..t {
            let s = m.get(i, j);
            if s >= tau {
                pairs.insert((i, j));
                scores.push(((i, j), s));
            }
        }
    }
    Ok(AlignmentHypothesis {
        pairs,
        scores: Some(scores),
    })
}

/// Merges the two directional matrices. Decisions use `≥ tau`.
pub fn symmetrize(fwd: &ScoreMatrix, rev: &ScoreMatrix, kind: SymmetrizationKind, tau: f64) -> Result<AlignmentHypothesis> {
    check_threshold(tau)?;
    if fwd.dims() != rev.dims() {
        return Err(Error::Shape(format!(
            "forward matrix is {:?}, reverse is {:?}",
            fwd.dims(),
            rev.dims()
        )));
    }
    let (n, m) = fwd.dims();
    let mut pairs = BTreeSet::new();
    let mut scores = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let (f, r) = (fwd.get(i, j), rev.get(i, j));
            let avg = (f + r) / 2.0;
            let (keep, score) = match kind {
                SymmetrizationKind::ForwardOnly => (f >= tau, f),
                SymmetrizationKind::ReverseOnly => (r >= tau, r),
                SymmetrizationKind::ProbAverage => (avg >= tau, avg),
                SymmetrizationKind::Intersection => (f >= tau && r >= tau, avg),
                SymmetrizationKind::Union => (f >= tau || r >= tau, avg),
                SymmetrizationKind::BidiAverage => {
                    let votes = f64::from(u8::from(f >= tau)) + f64::from(u8::from(r >= tau));
                    (votes / 2.0 >= tau, avg)
                }
            };
            if keep {
                pairs.insert((i, j));
                scores.push(((i, j), score));
            }
        }
    }
    Ok(AlignmentHypothesis {
        pairs,
        scores: Some(scores),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    pub agg: AggregationKind,
    pub kind: SymmetrizationKind,
    pub threshold: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            agg: AggregationKind::Max,
            kind: SymmetrizationKind::ProbAverage,
            threshold: 0.5,
        }
    }
}

/// Both directional matrices of one pair (only the needed one for
/// unidirectional kinds; the other is `None`).
pub fn pair_scores<T: Real>(
    pair: &TokenizedPair,
    params: &Parameters<T>,
    agg: AggregationKind,
    kind: SymmetrizationKind,
) -> Result<(Option<ScoreMatrix>, Option<ScoreMatrix>)> {
    let fwd = match kind {
        SymmetrizationKind::ReverseOnly => None,
        _ => Some(score_matrix(pair, params, Direction::Forward, agg)?),
    };
    let rev = match kind {
        SymmetrizationKind::ForwardOnly => None,
        _ => Some(score_matrix(pair, params, Direction::Reverse, agg)?),
    };
    Ok((fwd, rev))
}

pub fn decode(fwd: Option<&ScoreMatrix>, rev: Option<&ScoreMatrix>, kind: SymmetrizationKind, tau: f64) -> Result<AlignmentHypothesis> {
    let missing = || Error::InvalidArgument(format!("{kind} needs both score matrices"));
    match (kind, fwd, rev) {
        (SymmetrizationKind::ForwardOnly, Some(f), _) => threshold_matrix(f, tau),
        (SymmetrizationKind::ReverseOnly, _, Some(r)) => threshold_matrix(r, tau),
        (_, Some(f), Some(r)) => symmetrize(f, r, kind, tau),
        _ => Err(missing()),
    }
}

pub fn align_pair<T: Real>(pair: &SentencePair, vocab: &SubwordVocabulary, params: &Parameters<T>, opts: &AlignOptions) -> Result<AlignmentHypothesis> {
    check_threshold(opts.threshold)?;
    let tp = TokenizedPair::new(pair, vocab);
    let (f, r) = pair_scores(&tp, params, opts.agg, opts.kind)?;
    decode(f.as_ref(), r.as_ref(), opts.kind, opts.threshold)
}

/// Aligns every pair independently. A failing pair yields its error in place
/// and does not stop the others; output order is input order.
pub fn align_corpus(corpus: &[SentencePair], checkpoint: &Checkpoint, opts: &AlignOptions) -> Vec<Result<AlignmentHypothesis>> {
    corpus
        .par_iter()
        .map(|pair| align_pair(pair, &checkpoint.vocab, &checkpoint.params, opts))
        .collect()
}
