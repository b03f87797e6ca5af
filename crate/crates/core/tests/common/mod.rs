//! Independent oracles shared by the integration and acceptance tests. None of
//! this code calls into the library's numerical paths.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wordalign::encoder::{loss_and_grad, EncodedInput, LabeledInput, ModelConfig, Parameters};

pub type Link = (usize, usize);

// ---------------------------------------------------------------------------
// Reference forward pass: nested Vecs and scalar loops, read straight from the
// named parameter blocks.

fn mat(p: &Parameters<f64>, name: &str, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let b = p.block(name).unwrap_or_else(|| panic!("missing block {name}"));
    assert_eq!(b.len(), rows * cols);
    (0..rows).map(|r| b[r * cols..(r + 1) * cols].to_vec()).collect()
}

fn vector(p: &Parameters<f64>, name: &str) -> Vec<f64> {
    p.block(name).unwrap().to_vec()
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean: f64 = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = (var + 1e-5).sqrt();
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / sd * gain[i] + bias[i])
        .collect()
}

fn times(x: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for j in 0..cols {
        for (k, xk) in x.iter().enumerate() {
            out[j] += xk * w[k][j];
        }
    }
    out
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (u + 0.044715 * u.powi(3))).tanh())
}

pub fn reference_logits(input: &EncodedInput, p: &Parameters<f64>) -> Vec<f64> {
    let cfg = *p.config();
    let (d, f, heads) = (cfg.d_model, cfg.ffn_dim, cfg.n_heads);
    let dh = d / heads;
    let len = input.ids.len();
    let tok = mat(p, "tok_emb", cfg.vocab_size, d);
    let seg = mat(p, "seg_emb", 2, d);

    let mut x: Vec<Vec<f64>> = (0..len)
        .map(|t| {
            (0..d)
                .map(|i| {
                    let freq = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                    let pe = if i % 2 == 0 { (t as f64 / freq).sin() } else { (t as f64 / freq).cos() };
                    tok[input.ids[t] as usize][i] + seg[input.segments[t] as usize][i] + pe
                })
                .collect()
        })
        .collect();

    for l in 0..cfg.n_layers {
        let name = |s: &str| format!("layers.{l}.{s}");
        let wq = mat(p, &name("attn.wq"), d, d);
        let wk = mat(p, &name("attn.wk"), d, d);
        let wv = mat(p, &name("attn.wv"), d, d);
        let wo = mat(p, &name("attn.wo"), d, d);
        let h: Vec<Vec<f64>> = x
            .iter()
            .map(|r| layer_norm(r, &vector(p, &name("ln1.gain")), &vector(p, &name("ln1.bias"))))
            .collect();
        let q: Vec<Vec<f64>> = h.iter().map(|r| times(r, &wq)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|r| times(r, &wk)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| times(r, &wv)).collect();
        let mut ctx = vec![vec![0.0; d]; len];
        for hd in 0..heads {
            for i in 0..len {
                let scores: Vec<f64> = (0..len)
                    .map(|j| (0..dh).map(|c| q[i][hd * dh + c] * k[j][hd * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for j in 0..len {
                    let a = (scores[j] - m).exp() / z;
                    for c in 0..dh {
                        ctx[i][hd * dh + c] += a * v[j][hd * dh + c];
                    }
                }
            }
        }
        for i in 0..len {
            let o = times(&ctx[i], &wo);
            for c in 0..d {
                x[i][c] += o[c];
            }
        }
        let w1 = mat(p, &name("ffn.w1"), d, f);
        let w2 = mat(p, &name("ffn.w2"), f, d);
        let b1 = vector(p, &name("ffn.b1"));
        let b2 = vector(p, &name("ffn.b2"));
        for xr in x.iter_mut() {
            let h2 = layer_norm(xr, &vector(p, &name("ln2.gain")), &vector(p, &name("ln2.bias")));
            let u: Vec<f64> = times(&h2, &w1).iter().zip(&b1).map(|(a, b)| gelu(a + b)).collect();
            let o = times(&u, &w2);
            for c in 0..d {
                xr[c] += o[c] + b2[c];
            }
        }
    }

    let w = vector(p, "head.w");
    let b = vector(p, "head.b")[0];
    input
        .target_positions
        .clone()
        .map(|t| {
            let hf = layer_norm(&x[t], &vector(p, "final_ln.gain"), &vector(p, "final_ln.bias"));
            hf.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Random encoder inputs.

pub fn random_input(rng: &mut impl Rng, cfg: &ModelConfig, max_side: usize) -> EncodedInput {
    let n_src = rng.random_range(1..=max_side);
    let n_tgt = rng.random_range(1..=max_side);
    let word = rng.random_range(0..n_src);
    let tok = |rng: &mut dyn rand::RngCore| 6 + rng.random_range(0..(cfg.vocab_size as u32 - 6));
    let mut ids = vec![2u32];
    for i in 0..n_src {
        if i == word {
            ids.push(4);
        }
        ids.push(tok(rng));
        if i == word {
            ids.push(5);
        }
    }
    ids.push(3);
    let start = ids.len();
    for _ in 0..n_tgt {
        ids.push(tok(rng));
    }
    let end = ids.len();
    ids.push(3);
    let mut segments = vec![0u8; start];
    segments.resize(ids.len(), 1);
    EncodedInput {
        ids,
        segments,
        target_positions: start..end,
    }
}

// ---------------------------------------------------------------------------
// Central finite differences of the mean BCE loss, computed from the
// reference forward pass.

fn reference_loss(batch: &[(EncodedInput, Vec<bool>)], p: &Parameters<f64>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (input, labels) in batch {
        for (z, &a) in reference_logits(input, p).iter().zip(labels) {
            let prob = 1.0 / (1.0 + (-z).exp());
            let term = if a { prob.ln() } else { (1.0 - prob).ln() };
            total -= term.max(-30.0);
            n += 1;
        }
    }
    total / n as f64
}

pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_block: String,
    pub n_checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// gradients that are zero up to rounding from dominating.
pub const REL_FLOOR: f64 = 1e-6;

pub fn gradient_check(cfg: &ModelConfig, seed: u64, h: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Parameters::<f64>::init(cfg, seed).unwrap();
    // Move gains and biases off their init values so their gradients are generic.
    for x in p.as_mut_slice().iter_mut() {
        *x += rng.random_range(-0.1..0.1);
    }
    let batch_size = rng.random_range(1..=3);
    let batch: Vec<(EncodedInput, Vec<bool>)> = (0..batch_size)
        .map(|_| {
            let input = random_input(&mut rng, cfg, 4);
            let labels = (0..input.target_positions.len()).map(|_| rng.random_bool(0.4)).collect();
            (input, labels)
        })
        .collect();
    let items: Vec<LabeledInput> = batch
        .iter()
        .map(|(input, labels)| LabeledInput { input, labels })
        .collect();
    let (_, grads) = loss_and_grad(&items, &p).unwrap();

    let mut worst = (0.0f64, String::new());
    let blocks = p.layout().blocks().to_vec();
    let mut n_checked = 0;
    for b in &blocks {
        for idx in b.offset..b.offset + b.len {
            let orig = p.as_slice()[idx];
            p.as_mut_slice()[idx] = orig + h;
            let up = reference_loss(&batch, &p);
            p.as_mut_slice()[idx] = orig - h;
            let down = reference_loss(&batch, &p);
            p.as_mut_slice()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.as_slice()[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            n_checked += 1;
            if rel > worst.0 {
                worst = (rel, format!("{}[{}] analytic={analytic:e} numeric={numeric:e}", b.name, idx - b.offset));
            }
        }
    }
    GradCheck {
        max_rel_error: worst.0,
        worst_block: worst.1,
        n_checked,
    }
}

pub fn grad_check_config(rng: &mut impl Rng) -> ModelConfig {
    let n_heads = [1, 2, 4][rng.random_range(0..3)];
    ModelConfig {
        d_model: 8,
        n_heads,
        n_layers: 2,
        ffn_dim: [8, 12, 16][rng.random_range(0..3)],
        max_len: 32,
        vocab_size: 12,
        dropout_rate: 0.0,
    }
}

// ---------------------------------------------------------------------------
// Set-arithmetic metric oracle.

pub struct OracleScores {
    pub aer: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Brute force over explicit sets; counts are integers until the final division.
pub fn oracle_scores(corpus: &[(BTreeSet<Link>, BTreeSet<Link>, BTreeSet<Link>)]) -> OracleScores {
    let (mut hs, mut hp, mut h, mut s) = (0u64, 0u64, 0u64, 0u64);
    for (hyp, sure, possible) in corpus {
        for link in hyp {
            if sure.contains(link) {
                hs += 1;
            }
            if possible.contains(link) || sure.contains(link) {
                hp += 1;
            }
        }
        h += hyp.len() as u64;
        s += sure.len() as u64;
    }
    let precision = if h == 0 { 0.0 } else { hp as f64 / h as f64 };
    let recall = hs as f64 / s as f64;
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    OracleScores {
        aer: 1.0 - (hs + hp) as f64 / (h + s) as f64,
        precision,
        recall,
        f1,
    }
}

pub fn random_links(rng: &mut impl Rng, n: usize, m: usize, density: f64) -> BTreeSet<Link> {
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in 0..m {
            if rng.random_bool(density) {
                out.insert((i, j));
            }
        }
    }
    out
}
