//! A small pre-norm transformer cross-encoder with a per-token logit head.
//!
//! All parameters live in one flat buffer, laid out block by block in a fixed
//! declaration order (see [`Layout`]). Gradients use the same layout, which
//! keeps the optimizer and the checkpoint format trivial.

mod adam;
mod checkpoint;
mod input;
mod linalg;
mod model;

use std::fmt;

use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta, CHECKPOINT_MAGIC};
pub use input::{encode_pair, mark_span, EncodedInput};
pub use model::{bce, forward, loss_and_grad, loss_and_grad_with_dropout, sigmoid, LabeledInput};

/// Floating-point type the model can run in. Training uses `f32`; gradient
/// verification uses `f64`.
pub trait Real: Float + FromPrimitive + Default + Send + Sync + fmt::Debug + std::iter::Sum + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn with_vocab_size(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ffn_dim: 128,
            max_len: 256,
            vocab_size,
            dropout_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 8 {
            return Err(Error::Config(format!("max_len {} is below 8", self.max_len)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} is outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Matrix initialized uniformly in ±sqrt(6 / (fan_in + fan_out)).
    Weight { fan_in: usize, fan_out: usize },
    Bias,
    /// Layer-norm scale, initialized to one.
    Gain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub kind: BlockKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub ln1_gain: usize,
    pub ln1_bias: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_gain: usize,
    pub ln2_bias: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Offsets of every parameter block inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub(crate) tok_emb: usize,
    pub(crate) seg_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) final_gain: usize,
    pub(crate) final_bias: usize,
    pub(crate) head_w: usize,
    pub(crate) head_b: usize,
    blocks: Vec<Block>,
    len: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.ffn_dim;
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, len: usize, kind: BlockKind| {
            let at = offset;
            blocks.push(Block {
                name,
                offset: at,
                len,
                kind,
            });
            offset += len;
            at
        };
        let weight = |fan_in, fan_out| BlockKind::Weight { fan_in, fan_out };

        let tok_emb = push("tok_emb".into(), cfg.vocab_size * d, weight(cfg.vocab_size, d));
        let seg_emb = push("seg_emb".into(), 2 * d, weight(2, d));
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            layers.push(LayerOffsets {
                ln1_gain: push(p("ln1.gain"), d, BlockKind::Gain),
                ln1_bias: push(p("ln1.bias"), d, BlockKind::Bias),
                wq: push(p("attn.wq"), d * d, weight(d, d)),
                wk: push(p("attn.wk"), d * d, weight(d, d)),
                wv: push(p("attn.wv"), d * d, weight(d, d)),
                wo: push(p("attn.wo"), d * d, weight(d, d)),
                ln2_gain: push(p("ln2.gain"), d, BlockKind::Gain),
                ln2_bias: push(p("ln2.bias"), d, BlockKind::Bias),
                w1: push(p("ffn.w1"), d * f, weight(d, f)),
                b1: push(p("ffn.b1"), f, BlockKind::Bias),
                w2: push(p("ffn.w2"), f * d, weight(f, d)),
                b2: push(p("ffn.b2"), d, BlockKind::Bias),
            });
        }
        let final_gain = push("final_ln.gain".into(), d, BlockKind::Gain);
        let final_bias = push("final_ln.bias".into(), d, BlockKind::Bias);
        let head_w = push("head.w".into(), d, weight(d, 1));
        let head_b = push("head.b".into(), 1, BlockKind::Bias);
        Layout {
            tok_emb,
            seg_emb,
            layers,
            final_gain,
            final_bias,
            head_w,
            head_b,
            blocks,
            len: offset,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Model parameters (or gradients) for one [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    config: ModelConfig,
    layout: Layout,
    data: Vec<T>,
}

impl<T: Real> Parameters<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        Ok(Parameters {
            config: *config,
            data: vec![T::zero(); layout.len()],
            layout,
        })
    }

    /// Deterministic scaled-uniform initialization; biases zero, gains one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in p.layout.blocks.clone() {
            let dst = &mut p.data[b.offset..b.offset + b.len];
            match b.kind {
                BlockKind::Weight { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for x in dst {
                        *x = T::of(rng.random_range(-limit..limit));
                    }
                }
                BlockKind::Bias => {}
                BlockKind::Gain => dst.fill(T::one()),
            }
        }
        Ok(p)
    }

    pub fn from_vec(config: &ModelConfig, data: Vec<T>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn block(&self, name: &str) -> Option<&[T]> {
        let b = self.layout.blocks.iter().find(|b| b.name == name)?;
        Some(&self.data[b.offset..b.offset + b.len])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let b = self.layout.blocks.iter().find(|b| b.name == name)?;
        Some(&mut self.data[b.offset..b.offset + b.len])
    }

    pub fn same_shape<U>(&self, other: &Parameters<U>) -> bool {
        self.config == other.config
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        Parameters {
            config: self.config,
            layout: self.layout.clone(),
            data: self.data.iter().map(|x| U::of(x.to_f64().unwrap())).collect(),
        }
    }

    /// Name of the first block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.layout
            .blocks
            .iter()
            .find(|b| self.data[b.offset..b.offset + b.len].iter().any(|x| !x.is_finite()))
            .map(|b| b.name.as_str())
    }

    pub(crate) fn add_assign(&mut self, other: &Parameters<T>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}
