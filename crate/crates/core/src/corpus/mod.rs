//! Parallel text, gold alignments and subword tokenization.
//!
//! Sentences are pre-tokenized: words are whitespace-separated, one sentence
//! per line. Gold alignments use the Pharaoh format, see [`parse_pharaoh`].

mod pharaoh;
mod vocab;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use pharaoh::{format_links, format_pharaoh, parse_pharaoh};
pub use vocab::{
    detokenize, tokenize, train_subword_vocab, SubwordTokenization, SubwordVocabulary,
    WordTokenMap, CLS, CONTINUATION_MARKER, MARK_CLOSE, MARK_OPEN, PAD, SEP, SPECIAL_TOKENS, UNK,
};

/// A word-level link `(source word, target word)`.
pub type Link = (usize, usize);

/// A whitespace-tokenized sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WordSequence {
    words: Vec<String>,
    raw: String,
}

impl WordSequence {
    /// Splits `raw` on whitespace. The original line is kept verbatim.
    pub fn parse(raw: &str) -> Self {
        let words = raw.split_whitespace().map(str::to_owned).collect();
        WordSequence {
            words,
            raw: raw.to_owned(),
        }
    }

    pub fn from_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Result<Self> {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        if let Some(w) = words
            .iter()
            .find(|w| w.is_empty() || w.chars().any(char::is_whitespace))
        {
            return Err(Error::InvalidArgument(format!(
                "word {w:?} is empty or contains whitespace"
            )));
        }
        let raw = words.join(" ");
        Ok(WordSequence { words, raw })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words joined by single spaces.
    pub fn normalized(&self) -> String {
        self.words.join(" ")
    }
}

/// Sure (`S`) and possible (`P`) links of one sentence pair, with `S ⊆ P`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct GoldAlignment {
    sure: BTreeSet<Link>,
    possible: BTreeSet<Link>,
}

impl GoldAlignment {
    /// `possible` is widened to include every sure link.
    pub fn new(sure: impl IntoIterator<Item = Link>, possible: impl IntoIterator<Item = Link>) -> Self {
        let sure: BTreeSet<Link> = sure.into_iter().collect();
        let mut possible: BTreeSet<Link> = possible.into_iter().collect();
        possible.extend(sure.iter().copied());
        GoldAlignment { sure, possible }
    }

    /// Gold with `S == P`.
    pub fn from_sure(sure: impl IntoIterator<Item = Link>) -> Self {
        let sure: BTreeSet<Link> = sure.into_iter().collect();
        GoldAlignment {
            possible: sure.clone(),
            sure,
        }
    }

    pub fn sure(&self) -> &BTreeSet<Link> {
        &self.sure
    }

    pub fn possible(&self) -> &BTreeSet<Link> {
        &self.possible
    }

    pub fn is_sure(&self, link: Link) -> bool {
        self.sure.contains(&link)
    }

    pub fn check_bounds(&self, n: usize, m: usize) -> Result<()> {
        match self.possible.iter().find(|&&(i, j)| i >= n || j >= m) {
            Some(&(i, j)) => Err(Error::OutOfBounds { i, j, n, m }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: WordSequence,
    pub target: WordSequence,
    gold: Option<GoldAlignment>,
}

impl SentencePair {
    pub fn new(source: WordSequence, target: WordSequence, gold: Option<GoldAlignment>) -> Result<Self> {
        if let Some(g) = &gold {
            g.check_bounds(source.len(), target.len())?;
        }
        Ok(SentencePair {
            source,
            target,
            gold,
        })
    }

    pub fn gold(&self) -> Option<&GoldAlignment> {
        self.gold.as_ref()
    }

    pub fn without_gold(&self) -> SentencePair {
        SentencePair {
            source: self.source.clone(),
            target: self.target.clone(),
            gold: None,
        }
    }
}

/// Reads a parallel corpus from line-aligned files.
pub fn parse_parallel_corpus(
    src_path: &Path,
    tgt_path: &Path,
    align_path: Option<&Path>,
) -> Result<Vec<SentencePair>> {
    let src = fs::read_to_string(src_path)?;
    let tgt = fs::read_to_string(tgt_path)?;
    let align = align_path.map(fs::read_to_string).transpose()?;
    let names = [
        src_path.display().to_string(),
        tgt_path.display().to_string(),
        align_path.map(|p| p.display().to_string()).unwrap_or_default(),
    ];
    parse_parallel_text(&src, &tgt, align.as_deref(), &names)
}

/// Same as [`parse_parallel_corpus`] over in-memory text. `names` label the
/// three inputs in error messages.
pub fn parse_parallel_text(
    src: &str,
    tgt: &str,
    align: Option<&str>,
    names: &[String; 3],
) -> Result<Vec<SentencePair>> {
    let src_lines: Vec<&str> = src.lines().collect();
    let tgt_lines: Vec<&str> = tgt.lines().collect();
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::LineCountMismatch {
            left: names[0].clone(),
            left_lines: src_lines.len(),
            right: names[1].clone(),
            right_lines: tgt_lines.len(),
        });
    }
    let align_lines: Option<Vec<&str>> = align.map(|a| a.lines().collect());
    if let Some(a) = &align_lines {
        if a.len() != src_lines.len() {
            return Err(Error::LineCountMismatch {
                left: names[0].clone(),
                left_lines: src_lines.len(),
                right: names[2].clone(),
                right_lines: a.len(),
            });
        }
    }

    let mut pairs = Vec::with_capacity(src_lines.len());
    for (idx, (s, t)) in src_lines.iter().zip(&tgt_lines).enumerate() {
        let line = idx + 1;
        let source = parse_sentence(s, &names[0], line)?;
        let target = parse_sentence(t, &names[1], line)?;
        let gold = match &align_lines {
            Some(a) => Some(parse_pharaoh(a[idx]).map_err(|e| Error::Parse {
                file: names[2].clone(),
                line,
                message: e.to_string(),
            })?),
            None => None,
        };
        let pair = SentencePair::new(source, target, gold).map_err(|e| Error::Parse {
            file: names[2].clone(),
            line,
            message: e.to_string(),
        })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn parse_sentence(line: &str, file: &str, line_no: usize) -> Result<WordSequence> {
    let ws = WordSequence::parse(line);
    if ws.is_empty() {
        return Err(Error::Parse {
            file: file.to_owned(),
            line: line_no,
            message: "empty sentence".into(),
        });
    }
    Ok(ws)
}

/// Renders the three corpus files (source, target, Pharaoh gold). Pairs
/// without gold produce an empty alignment line.
pub fn render_parallel_corpus(pairs: &[SentencePair]) -> (String, String, String) {
    let mut src = String::new();
    let mut tgt = String::new();
    let mut align = String::new();
    for p in pairs {
        src.push_str(&p.source.normalized());
        src.push('\n');
        tgt.push_str(&p.target.normalized());
        tgt.push('\n');
        if let Some(g) = p.gold() {
            align.push_str(&format_pharaoh(g));
        }
        align.push('\n');
    }
    (src, tgt, align)
}
