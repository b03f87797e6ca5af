//! Binary checkpoint format.
//!
//! ```text
//! "BALN1"                      magic, the trailing digit is the version
//! u64 LE                       header length in bytes
//! header                       UTF-8 JSON: config, vocabulary, metadata, block table
//! f32 LE * n                   parameter blocks in declaration order
//! ```

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Parameters};
use crate::corpus::SubwordVocabulary;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"BALN1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_seen: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters<f32>,
    pub vocab: SubwordVocabulary,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    /// Freshly initialized model over `vocab`.
    pub fn fresh(config: ModelConfig, vocab: SubwordVocabulary, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "vocab_size {} does not match the vocabulary ({} tokens)",
                config.vocab_size,
                vocab.len()
            )));
        }
        Ok(Checkpoint {
            params: Parameters::init(&config, seed)?,
            vocab,
            meta: TrainingMeta {
                epochs_seen: 0,
                seed,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    meta: TrainingMeta,
    vocab: Vec<String>,
    blocks: Vec<BlockEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    name: String,
    len: usize,
}

pub fn save_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let header = Header {
        config: *c.config(),
        meta: c.meta,
        vocab: c.vocab.tokens().to_vec(),
        blocks: c
            .params
            .layout()
            .blocks()
            .iter()
            .map(|b| BlockEntry {
                name: b.name.clone(),
                len: b.len,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let data = c.params.as_slice();
    let mut out = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 8 + json.len() + data.len() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |what: &str| Error::Checkpoint(what.to_owned());
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..4] != b"BALN" {
        return Err(corrupt("bad magic, not a checkpoint file"));
    }
    if &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {:?}",
            bytes[4] as char
        )));
    }
    let rest = &bytes[5..];
    let len_bytes: [u8; 8] = rest
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| corrupt("truncated header length"))?;
    let header_len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| corrupt("header too large"))?;
    let rest = &rest[8..];
    let json = rest.get(..header_len).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let body = &rest[header_len..];

    header.config.validate()?;
    let vocab = SubwordVocabulary::from_tokens(header.vocab)?;
    if vocab.len() != header.config.vocab_size {
        return Err(corrupt("vocabulary size does not match config"));
    }
    let expected = Parameters::<f32>::zeros(&header.config)?;
    let layout = expected.layout();
    if header.blocks.len() != layout.blocks().len()
        || header
            .blocks
            .iter()
            .zip(layout.blocks())
            .any(|(h, b)| h.name != b.name || h.len != b.len)
    {
        return Err(corrupt("block table does not match config"));
    }
    if body.len() != layout.len() * 4 {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            layout.len() * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Checkpoint {
        params: Parameters::from_vec(&header.config, data)?,
        vocab,
        meta: header.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SPECIAL_TOKENS;

    fn checkpoint() -> Checkpoint {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(["a", "b", "##a"].map(String::from));
        let vocab = SubwordVocabulary::from_tokens(tokens).unwrap();
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            ffn_dim: 8,
            max_len: 16,
            vocab_size: vocab.len(),
            dropout_rate: 0.0,
        };
        let mut c = Checkpoint::fresh(cfg, vocab, 11).unwrap();
        c.params.as_mut_slice()[3] = f32::MIN_POSITIVE / 2.0;
        c.params.as_mut_slice()[4] = -0.0;
        c.meta.epochs_seen = 3;
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = checkpoint();
        let bytes = save_checkpoint(&c);
        let back = load_checkpoint(&bytes).unwrap();
        let bits = |p: &Parameters<f32>| p.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&c.params));
        assert_eq!(back.vocab, c.vocab);
        assert_eq!(back.meta, c.meta);
        assert_eq!(save_checkpoint(&back), bytes);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let bytes = save_checkpoint(&checkpoint());
        for cut in [0, 3, 5, 10, 40, bytes.len() - 1] {
            assert!(load_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(load_checkpoint(&longer).is_err());
    }

    #[test]
    fn wrong_magic_or_version_is_rejected() {
        let mut bytes = save_checkpoint(&checkpoint());
        bytes[0] = b'X';
        assert!(load_checkpoint(&bytes).unwrap_err().to_string().contains("magic"));
        let mut bytes = save_checkpoint(&checkpoint());
        bytes[4] = b'2';
        assert!(load_checkpoint(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn vocab_size_must_match() {
        let c = checkpoint();
        let cfg = ModelConfig { vocab_size: 3, ..*c.config() };
        assert!(Checkpoint::fresh(cfg, c.vocab.clone(), 0).is_err());
    }
}
