//! Word alignment as per-token binary classification.
//!
//! For every word of one sentence, the word is wrapped in marker tokens and
//! the pair is cross-encoded; a linear head on every token of the other
//! sentence predicts whether that token's word is aligned to the marked word.
//! Token probabilities are aggregated to word level, computed in both
//! directions and symmetrized into a set of links.

pub mod aligner;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
