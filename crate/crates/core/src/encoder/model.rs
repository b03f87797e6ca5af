//! Forward pass, binary cross-entropy loss and hand-written backpropagation.
//!
//! Every sequence is processed on its own at its exact length, so nothing is
//! ever padded: batch items cannot leak into each other and `[PAD]` never
//! reaches attention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::linalg::{axpy, col_sum_acc, dot, matmul, matmul_wt_acc, matmul_xt_acc};
use super::{EncodedInput, LayerOffsets, Parameters, Real};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const LOG_CLAMP: f64 = -30.0;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// One item of a training batch: an encoded query and one 0/1 label per
/// target token.
#[derive(Debug, Clone, Copy)]
pub struct LabeledInput<'a> {
    pub input: &'a EncodedInput,
    pub labels: &'a [bool],
}

struct LnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    h: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads × len × len` attention weights.
    probs: Vec<T>,
    ctx: Vec<T>,
    attn_mask: Option<Vec<T>>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    u: Vec<T>,
    act: Vec<T>,
    ffn_mask: Option<Vec<T>>,
}

struct Trace<T> {
    layers: Vec<LayerCache<T>>,
    final_ln: LnCache<T>,
    hf: Vec<T>,
    logits: Vec<T>,
}

fn layer_norm<T: Real>(x: &[T], d: usize, gain: &[T], bias: &[T], out: &mut [T]) -> LnCache<T> {
    let rows = x.len() / d;
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(rows);
    let dn = T::of(d as f64);
    for ((xr, hr), or) in x
        .chunks_exact(d)
        .zip(xhat.chunks_exact_mut(d))
        .zip(out.chunks_exact_mut(d))
    {
        let mean = xr.iter().copied().sum::<T>() / dn;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + T::of(LN_EPS)).sqrt();
        for i in 0..d {
            hr[i] = (xr[i] - mean) * is;
            or[i] = hr[i] * gain[i] + bias[i];
        }
        inv_std.push(is);
    }
    LnCache { xhat, inv_std }
}

/// Accumulates into `dx`, `dgain` and `dbias`.
fn layer_norm_backward<T: Real>(
    dy: &[T],
    cache: &LnCache<T>,
    gain: &[T],
    d: usize,
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let dn = T::of(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for (((dyr, hr), &is), dxr) in dy
        .chunks_exact(d)
        .zip(cache.xhat.chunks_exact(d))
        .zip(&cache.inv_std)
        .zip(dx.chunks_exact_mut(d))
    {
        for i in 0..d {
            dgain[i] = dgain[i] + dyr[i] * hr[i];
            dbias[i] = dbias[i] + dyr[i];
            dxhat[i] = dyr[i] * gain[i];
        }
        let m1 = dxhat.iter().copied().sum::<T>() / dn;
        let m2 = dot(&dxhat, hr) / dn;
        for i in 0..d {
            dxr[i] = dxr[i] + is * (dxhat[i] - m1 - hr[i] * m2);
        }
    }
}

fn gelu<T: Real>(u: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    half * u * (T::one() + (c * (u + k * u * u * u)).tanh())
}

fn gelu_grad<T: Real>(u: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(GELU_K);
    let half = T::of(0.5);
    let t = (c * (u + k * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * u * u)
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Binary cross-entropy of `σ(z)` against `label` and its derivative in `z`.
/// Log-probabilities are clamped at −30; the clamped region has zero slope.
pub fn bce<T: Real>(z: T, label: bool) -> (T, T) {
    let clamp = T::of(LOG_CLAMP);
    let (log_p, slope) = if label {
        (-softplus(-z), sigmoid(z) - T::one())
    } else {
        (-softplus(z), sigmoid(z))
    };
    if log_p > clamp {
        (-log_p, slope)
    } else {
        (-clamp, T::zero())
    }
}

fn sinusoid(pos: usize, i: usize, d: usize) -> f64 {
    let pair = (i / 2) * 2;
    let angle = pos as f64 / 10000f64.powf(pair as f64 / d as f64);
    if i.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn check_input<T: Real>(input: &EncodedInput, params: &Parameters<T>) -> Result<()> {
    let cfg = params.config();
    let len = input.len();
    if len > cfg.max_len {
        return Err(Error::SequenceTooLong {
            len,
            max_len: cfg.max_len,
        });
    }
    if len == 0 || input.segments.len() != len || input.target_positions.end > len {
        return Err(Error::Shape(format!(
            "input has {} ids, {} segments, targets {:?}",
            len,
            input.segments.len(),
            input.target_positions
        )));
    }
    if let Some(&id) = input.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::Shape(format!(
            "token id {id} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    if input.segments.iter().any(|&s| s > 1) {
        return Err(Error::Shape("segment ids must be 0 or 1".into()));
    }
    Ok(())
}

fn dropout_mask<T: Real>(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

fn run<T: Real>(input: &EncodedInput, params: &Parameters<T>, mut rng: Option<&mut ChaCha8Rng>) -> Result<Trace<T>> {
    check_input(input, params)?;
    let cfg = params.config();
    let layout = params.layout();
    let p = params.as_slice();
    let (len, d, f) = (input.len(), cfg.d_model, cfg.ffn_dim);
    let (n_heads, dh) = (cfg.n_heads, cfg.head_dim());
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let rate = cfg.dropout_rate;

    let mut x = vec![T::zero(); len * d];
    for (t, xr) in x.chunks_exact_mut(d).enumerate() {
        let tok = layout.tok_emb + input.ids[t] as usize * d;
        let seg = layout.seg_emb + input.segments[t] as usize * d;
        for i in 0..d {
            xr[i] = p[tok + i] + p[seg + i] + T::of(sinusoid(t, i, d));
        }
    }

    let mut layers = Vec::with_capacity(layout.layers.len());
    for lo in &layout.layers {
        let w = |off: usize, n: usize| &p[off..off + n];
        let mut h = vec![T::zero(); len * d];
        let ln1 = layer_norm(&x, d, w(lo.ln1_gain, d), w(lo.ln1_bias, d), &mut h);
        let mut q = vec![T::zero(); len * d];
        let mut k = vec![T::zero(); len * d];
        let mut v = vec![T::zero(); len * d];
        matmul(&h, w(lo.wq, d * d), len, d, d, &mut q);
        matmul(&h, w(lo.wk, d * d), len, d, d, &mut k);
        matmul(&h, w(lo.wv, d * d), len, d, d, &mut v);

        let mut probs = vec![T::zero(); n_heads * len * len];
        let mut ctx = vec![T::zero(); len * d];
        for hd in 0..n_heads {
            let cols = hd * dh..(hd + 1) * dh;
            for i in 0..len {
                let row = &mut probs[(hd * len + i) * len..(hd * len + i + 1) * len];
                let qi = &q[i * d..][cols.clone()];
                let mut max = T::neg_infinity();
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qi, &k[j * d..][cols.clone()]) * scale;
                    max = max.max(*s);
                }
                let mut total = T::zero();
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    total = total + *s;
                }
                let ci = &mut ctx[i * d..][cols.clone()];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = *s / total;
                    axpy(*s, &v[j * d..][cols.clone()], ci);
                }
            }
        }

        let mut branch = vec![T::zero(); len * d];
        matmul(&ctx, w(lo.wo, d * d), len, d, d, &mut branch);
        let attn_mask = match rng.as_deref_mut() {
            Some(r) if rate > 0.0 => Some(dropout_mask(r, len * d, rate)),
            _ => None,
        };
        add_branch(&mut x, &branch, attn_mask.as_deref());

        let mut h2 = vec![T::zero(); len * d];
        let ln2 = layer_norm(&x, d, w(lo.ln2_gain, d), w(lo.ln2_bias, d), &mut h2);
        let mut u = vec![T::zero(); len * f];
        matmul(&h2, w(lo.w1, d * f), len, d, f, &mut u);
        for ur in u.chunks_exact_mut(f) {
            axpy(T::one(), w(lo.b1, f), ur);
        }
        let act: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
        matmul(&act, w(lo.w2, f * d), len, f, d, &mut branch);
        for br in branch.chunks_exact_mut(d) {
            axpy(T::one(), w(lo.b2, d), br);
        }
        let ffn_mask = match rng.as_deref_mut() {
            Some(r) if rate > 0.0 => Some(dropout_mask(r, len * d, rate)),
            _ => None,
        };
        add_branch(&mut x, &branch, ffn_mask.as_deref());

        layers.push(LayerCache {
            ln1,
            h,
            q,
            k,
            v,
            probs,
            ctx,
            attn_mask,
            ln2,
            h2,
            u,
            act,
            ffn_mask,
        });
    }

    let mut hf = vec![T::zero(); len * d];
    let final_ln = layer_norm(
        &x,
        d,
        &p[layout.final_gain..layout.final_gain + d],
        &p[layout.final_bias..layout.final_bias + d],
        &mut hf,
    );
    let head_w = &p[layout.head_w..layout.head_w + d];
    let head_b = p[layout.head_b];
    let logits = input
        .target_positions
        .clone()
        .map(|t| dot(&hf[t * d..(t + 1) * d], head_w) + head_b)
        .collect();
    Ok(Trace {
        layers,
        final_ln,
        hf,
        logits,
    })
}

fn add_branch<T: Real>(x: &mut [T], branch: &[T], mask: Option<&[T]>) {
    match mask {
        Some(m) => {
            for ((xi, &bi), &mi) in x.iter_mut().zip(branch).zip(m) {
                *xi = *xi + bi * mi;
            }
        }
        None => axpy(T::one(), branch, x),
    }
}

fn apply_mask<T: Real>(dy: &[T], mask: Option<&[T]>) -> Vec<T> {
    match mask {
        Some(m) => dy.iter().zip(m).map(|(&a, &b)| a * b).collect(),
        None => dy.to_vec(),
    }
}

fn backward<T: Real>(input: &EncodedInput, params: &Parameters<T>, trace: &Trace<T>, dlogits: &[T], grads: &mut Parameters<T>) {
    let cfg = params.config();
    let layout = params.layout().clone();
    let p = params.as_slice();
    let g = grads.as_mut_slice();
    let (len, d, f) = (input.len(), cfg.d_model, cfg.ffn_dim);
    let (n_heads, dh) = (cfg.n_heads, cfg.head_dim());
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let mut dhf = vec![T::zero(); len * d];
    for (&dz, t) in dlogits.iter().zip(input.target_positions.clone()) {
        axpy(dz, &p[layout.head_w..layout.head_w + d], &mut dhf[t * d..(t + 1) * d]);
        axpy(dz, &trace.hf[t * d..(t + 1) * d], &mut g[layout.head_w..layout.head_w + d]);
        g[layout.head_b] = g[layout.head_b] + dz;
    }

    let mut dx = vec![T::zero(); len * d];
    {
        let (dgain, dbias) = pair_mut(g, layout.final_gain, layout.final_bias, d);
        layer_norm_backward(
            &dhf,
            &trace.final_ln,
            &p[layout.final_gain..layout.final_gain + d],
            d,
            dgain,
            dbias,
            &mut dx,
        );
    }

    for (lo, c) in layout.layers.iter().zip(&trace.layers).rev() {
        let lo: &LayerOffsets = lo;
        // Feed-forward branch.
        let df = apply_mask(&dx, c.ffn_mask.as_deref());
        col_sum_acc(&df, d, &mut g[lo.b2..lo.b2 + d]);
        matmul_xt_acc(&c.act, &df, len, f, d, &mut g[lo.w2..lo.w2 + f * d]);
        let mut du = vec![T::zero(); len * f];
        matmul_wt_acc(&df, &p[lo.w2..lo.w2 + f * d], len, f, d, &mut du);
        for (dz, &z) in du.iter_mut().zip(&c.u) {
            *dz = *dz * gelu_grad(z);
        }
        col_sum_acc(&du, f, &mut g[lo.b1..lo.b1 + f]);
        matmul_xt_acc(&c.h2, &du, len, d, f, &mut g[lo.w1..lo.w1 + d * f]);
        let mut dh2 = vec![T::zero(); len * d];
        matmul_wt_acc(&du, &p[lo.w1..lo.w1 + d * f], len, d, f, &mut dh2);
        {
            let (dgain, dbias) = pair_mut(g, lo.ln2_gain, lo.ln2_bias, d);
            layer_norm_backward(&dh2, &c.ln2, &p[lo.ln2_gain..lo.ln2_gain + d], d, dgain, dbias, &mut dx);
        }

        // Attention branch.
        let da = apply_mask(&dx, c.attn_mask.as_deref());
        matmul_xt_acc(&c.ctx, &da, len, d, d, &mut g[lo.wo..lo.wo + d * d]);
        let mut dctx = vec![T::zero(); len * d];
        matmul_wt_acc(&da, &p[lo.wo..lo.wo + d * d], len, d, d, &mut dctx);

        let mut dq = vec![T::zero(); len * d];
        let mut dk = vec![T::zero(); len * d];
        let mut dv = vec![T::zero(); len * d];
        let mut dscore = vec![T::zero(); len];
        for hd in 0..n_heads {
            let cols = hd * dh..(hd + 1) * dh;
            for i in 0..len {
                let prow = &c.probs[(hd * len + i) * len..(hd * len + i + 1) * len];
                let dci = &dctx[i * d..][cols.clone()];
                let mut weighted = T::zero();
                for (j, (&pj, ds)) in prow.iter().zip(dscore.iter_mut()).enumerate() {
                    let dp = dot(dci, &c.v[j * d..][cols.clone()]);
                    axpy(pj, dci, &mut dv[j * d..][cols.clone()]);
                    *ds = dp;
                    weighted = weighted + pj * dp;
                }
                for (j, (&pj, ds)) in prow.iter().zip(dscore.iter_mut()).enumerate() {
                    let s = pj * (*ds - weighted) * scale;
                    axpy(s, &c.k[j * d..][cols.clone()], &mut dq[i * d..][cols.clone()]);
                    axpy(s, &c.q[i * d..][cols.clone()], &mut dk[j * d..][cols.clone()]);
                }
            }
        }

        let mut dh = vec![T::zero(); len * d];
        for (off, dm) in [(lo.wq, &dq), (lo.wk, &dk), (lo.wv, &dv)] {
            matmul_xt_acc(&c.h, dm, len, d, d, &mut g[off..off + d * d]);
            matmul_wt_acc(dm, &p[off..off + d * d], len, d, d, &mut dh);
        }
        let (dgain, dbias) = pair_mut(g, lo.ln1_gain, lo.ln1_bias, d);
        layer_norm_backward(&dh, &c.ln1, &p[lo.ln1_gain..lo.ln1_gain + d], d, dgain, dbias, &mut dx);
    }

    for (t, dxr) in dx.chunks_exact(d).enumerate() {
        let tok = layout.tok_emb + input.ids[t] as usize * d;
        let seg = layout.seg_emb + input.segments[t] as usize * d;
        axpy(T::one(), dxr, &mut g[tok..tok + d]);
        axpy(T::one(), dxr, &mut g[seg..seg + d]);
    }
}

/// Two disjoint length-`n` blocks of `g`, the first starting before the second.
fn pair_mut<T>(g: &mut [T], a: usize, b: usize, n: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + n <= b);
    let (left, right) = g.split_at_mut(b);
    (&mut left[a..a + n], &mut right[..n])
}

/// One logit per target token.
pub fn forward<T: Real>(input: &EncodedInput, params: &Parameters<T>) -> Result<Vec<T>> {
    Ok(run(input, params, None)?.logits)
}

/// Mean binary cross-entropy over every target token of the batch, and its
/// exact gradient. Dropout is disabled.
pub fn loss_and_grad<T: Real>(batch: &[LabeledInput<'_>], params: &Parameters<T>) -> Result<(T, Parameters<T>)> {
    batch_loss(batch, params, None)
}

/// As [`loss_and_grad`], with the config's dropout rate applied. Masks are
/// derived from `seed` and the item position, so the result is reproducible.
pub fn loss_and_grad_with_dropout<T: Real>(
    batch: &[LabeledInput<'_>],
    params: &Parameters<T>,
    seed: u64,
) -> Result<(T, Parameters<T>)> {
    batch_loss(batch, params, Some(seed))
}

fn batch_loss<T: Real>(batch: &[LabeledInput<'_>], params: &Parameters<T>, seed: Option<u64>) -> Result<(T, Parameters<T>)> {
    let mut n_tokens = 0usize;
    for (i, item) in batch.iter().enumerate() {
        if item.labels.len() != item.input.n_targets() {
            return Err(Error::Shape(format!(
                "batch item {i}: {} labels for {} target tokens",
                item.labels.len(),
                item.input.n_targets()
            )));
        }
        n_tokens += item.labels.len();
    }
    let mut grads = Parameters::zeros(params.config())?;
    if n_tokens == 0 {
        return Ok((T::zero(), grads));
    }
    let norm = T::of(n_tokens as f64);

    let per_item: Vec<(T, Parameters<T>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let mut rng = seed.map(|s| ChaCha8Rng::seed_from_u64(s ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let trace = run(item.input, params, rng.as_mut())?;
            let mut loss = T::zero();
            let mut dlogits = Vec::with_capacity(trace.logits.len());
            for (&z, &a) in trace.logits.iter().zip(item.labels) {
                let (l, dz) = bce(z, a);
                loss = loss + l;
                dlogits.push(dz / norm);
            }
            let mut g = Parameters::zeros(params.config())?;
            backward(item.input, params, &trace, &dlogits, &mut g);
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;

    let mut loss = T::zero();
    for (l, g) in &per_item {
        loss = loss + *l;
        grads.add_assign(g);
    }
    Ok((loss / norm, grads))
}
