use std::ops::Range;

use crate::corpus::{SubwordTokenization, WordTokenMap, CLS, MARK_CLOSE, MARK_OPEN, SEP};
use crate::error::{Error, Result};

/// `[CLS] marked-side-with-marks [SEP] other-side [SEP]`, ready for the encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInput {
    pub ids: Vec<u32>,
    /// 0 for the marked side (including `[CLS]`, the marks and the first
    /// `[SEP]`), 1 for the other side and the final `[SEP]`.
    pub segments: Vec<u8>,
    /// Positions within `ids` of the tokens that receive a logit.
    pub target_positions: Range<usize>,
}

impl EncodedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.target_positions.len()
    }
}

/// Wraps the tokens of `word` in `[MARK]` / `[/MARK]`.
pub fn mark_span(tokens: &SubwordTokenization, word: usize, map: &WordTokenMap) -> Result<Vec<u32>> {
    let span = map.span(word)?;
    let ids = &tokens.token_ids;
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.extend_from_slice(&ids[..span.start]);
    out.push(MARK_OPEN);
    out.extend_from_slice(&ids[span.clone()]);
    out.push(MARK_CLOSE);
    out.extend_from_slice(&ids[span.end..]);
    Ok(out)
}

/// Builds the cross-encoder input that queries `word` of the marked side
/// against every token of `other`. Inputs longer than `max_len` are rejected.
pub fn encode_pair(
    marked: &SubwordTokenization,
    marked_map: &WordTokenMap,
    word: usize,
    other: &SubwordTokenization,
    max_len: usize,
) -> Result<EncodedInput> {
    let len = marked.len() + other.len() + 5;
    if len > max_len {
        return Err(Error::SequenceTooLong { len, max_len });
    }
    let marked_ids = mark_span(marked, word, marked_map)?;
    let mut ids = Vec::with_capacity(len);
    ids.push(CLS);
    ids.extend_from_slice(&marked_ids);
    ids.push(SEP);
    let start = ids.len();
    ids.extend_from_slice(&other.token_ids);
    let end = ids.len();
    ids.push(SEP);
    let mut segments = vec![0u8; start];
    segments.resize(len, 1);
    Ok(EncodedInput {
        ids,
        segments,
        target_positions: start..end,
    })
}
