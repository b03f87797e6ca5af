//! Subword vocabulary training and greedy longest-match tokenization.
//!
//! Non-initial pieces of a word carry the `##` continuation marker, both in
//! the vocabulary and in the token strings, so `"canapé"` may become
//! `["cana", "##pé"]`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::ops::Range;
use std::path::Path;

use super::{SentencePair, WordSequence};
use crate::error::{Error, Result};

pub const CONTINUATION_MARKER: &str = "##";

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MARK_OPEN: u32 = 4;
pub const MARK_CLOSE: u32 = 5;

pub const SPECIAL_TOKENS: [&str; 6] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MARK]", "[/MARK]"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SubwordVocabulary {
    /// Builds a vocabulary from tokens in id order. The six special tokens
    /// must come first.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
        {
            return Err(Error::Vocab(format!(
                "the first ids must be the special tokens {SPECIAL_TOKENS:?}"
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!("invalid token {tok:?} at id {id}")));
            }
            if ids.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {tok:?}")));
            }
        }
        Ok(SubwordVocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `token<TAB>id` lines, specials first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Vocab(format!("line {}: expected `token<TAB>id`", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Vocab(format!("line {}: bad id {id:?}", n + 1)))?;
            if id != n {
                return Err(Error::Vocab(format!(
                    "line {}: id {id} is not dense (expected {n})",
                    n + 1
                )));
            }
            tokens.push(tok.to_owned());
        }
        Self::from_tokens(tokens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn symbol(c: char, initial: bool) -> String {
    if initial {
        c.to_string()
    } else {
        format!("{CONTINUATION_MARKER}{c}")
    }
}

fn merged(left: &str, right: &str) -> String {
    let right = right.strip_prefix(CONTINUATION_MARKER).unwrap_or(right);
    format!("{left}{right}")
}

/// Trains a merge-based vocabulary over all source and target words.
///
/// The alphabet holds every seen character in its word-initial and its
/// continuation form; merges of the most frequent adjacent symbol pair are
/// then added until `target_size` is reached or nothing is left to merge.
/// Count ties go to the lexicographically smallest merged string.
pub fn train_subword_vocab(corpus: &[SentencePair], target_size: usize) -> Result<SubwordVocabulary> {
    let mut word_counts: HashMap<&str, usize> = HashMap::new();
    for pair in corpus {
        for w in pair.source.words().iter().chain(pair.target.words()) {
            *word_counts.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, usize)> = word_counts
        .into_iter()
        .map(|(w, c)| {
            let syms = w
                .chars()
                .enumerate()
                .map(|(i, ch)| symbol(ch, i == 0))
                .collect();
            (syms, c)
        })
        .collect();
    words.sort();

    let alphabet: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    let minimum = alphabet.len() + SPECIAL_TOKENS.len();
    if target_size < minimum {
        return Err(Error::VocabTooSmall {
            target: target_size,
            minimum,
        });
    }

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(alphabet);
    let mut known: BTreeSet<String> = tokens.iter().cloned().collect();

    while tokens.len() < target_size {
        let mut pair_counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, count) in &words {
            for w in syms.windows(2) {
                *pair_counts.entry((&w[0], &w[1])).or_default() += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .map(|((l, r), c)| (c, merged(l, r), l.to_owned(), r.to_owned()))
            .min_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)).then_with(|| (&a.2, &a.3).cmp(&(&b.2, &b.3))));
        let Some((_, new_symbol, left, right)) = best else {
            break;
        };
        for (syms, _) in &mut words {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                    out.push(new_symbol.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = out;
        }
        if known.insert(new_symbol.clone()) {
            tokens.push(new_symbol);
        }
    }
    SubwordVocabulary::from_tokens(tokens)
}

/// Token ids and strings of one sentence, with the word each token belongs to.
///
/// Characters missing from the vocabulary become `UNK` ids; their token
/// string keeps the original text so the position is recorded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordTokenization {
    pub token_ids: Vec<u32>,
    pub token_strings: Vec<String>,
    pub word_index: Vec<usize>,
}

impl SubwordTokenization {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn unk_positions(&self) -> Vec<usize> {
        self.token_ids
            .iter()
            .enumerate()
            .filter(|&(_, &id)| id == UNK)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-word half-open token spans; they partition the token range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordTokenMap {
    spans: Vec<Range<usize>>,
}

impl WordTokenMap {
    pub fn from_word_index(word_index: &[usize]) -> Self {
        let mut spans: Vec<Range<usize>> = Vec::new();
        for (k, &w) in word_index.iter().enumerate() {
            if w == spans.len() {
                spans.push(k..k + 1);
            } else {
                debug_assert_eq!(w + 1, spans.len(), "word_index must be monotone and contiguous");
                spans[w].end = k + 1;
            }
        }
        WordTokenMap { spans }
    }

    pub fn spans(&self) -> &[Range<usize>] {
        &self.spans
    }

    pub fn span(&self, word: usize) -> Result<Range<usize>> {
        self.spans.get(word).cloned().ok_or(Error::WordIndex {
            index: word,
            len: self.spans.len(),
        })
    }

    pub fn n_words(&self) -> usize {
        self.spans.len()
    }

    pub fn n_tokens(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }
}

/// Greedy longest-match segmentation of each word.
pub fn tokenize(ws: &WordSequence, vocab: &SubwordVocabulary) -> (SubwordTokenization, WordTokenMap) {
    let mut out = SubwordTokenization {
        token_ids: Vec::new(),
        token_strings: Vec::new(),
        word_index: Vec::new(),
    };
    let mut key = String::new();
    for (w, word) in ws.words().iter().enumerate() {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            for end in (start + 1..=chars.len()).rev() {
                key.clear();
                if start > 0 {
                    key.push_str(CONTINUATION_MARKER);
                }
                key.extend(&chars[start..end]);
                if let Some(id) = vocab.id(&key) {
                    found = Some((id, end));
                    break;
                }
            }
            let (id, end, text) = match found {
                Some((id, end)) => (id, end, key.clone()),
                None => (UNK, start + 1, symbol(chars[start], start == 0)),
            };
            out.token_ids.push(id);
            out.token_strings.push(text);
            out.word_index.push(w);
            start = end;
        }
    }
    let map = WordTokenMap::from_word_index(&out.word_index);
    (out, map)
}

/// Inverse of [`tokenize`] for UNK-free input.
pub fn detokenize(t: &SubwordTokenization) -> Result<WordSequence> {
    if let Some(position) = t.token_ids.iter().position(|&id| id == UNK) {
        return Err(Error::UnknownToken { position });
    }
    let mut words: Vec<String> = Vec::new();
    for (k, (s, &w)) in t.token_strings.iter().zip(&t.word_index).enumerate() {
        if w == words.len() {
            words.push(s.clone());
        } else {
            let piece = s.strip_prefix(CONTINUATION_MARKER).ok_or_else(|| {
                Error::InvalidArgument(format!("token {k} ({s:?}) continues a word without the marker"))
            })?;
            words[w].push_str(piece);
        }
    }
    WordSequence::from_words(words)
}
