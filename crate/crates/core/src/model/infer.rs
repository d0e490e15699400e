//! Inference with a key/value cache: full-sequence logits and batched
//! greedy decoding.

use std::collections::BTreeMap;

use super::ops::{add_bias, argmax, attend, gelu, layer_norm_rows};
use super::transformer::{check_tokens, project_head};
use super::{gemm, ModelError, Scalar, TransformerParams};
use crate::numeral::TokenId;

/// Sequences processed together in one decoding batch.
const DECODE_BATCH: usize = 256;

struct KvCache<T> {
    batch: usize,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
}

impl<T: Scalar> KvCache<T> {
    fn new(params: &TransformerParams<T>, batch: usize) -> Self {
        let cfg = &params.config;
        let size = batch * cfg.context_length * cfg.d_model;
        Self {
            batch,
            keys: (0..cfg.n_layers).map(|_| vec![T::zero(); size]).collect(),
            values: (0..cfg.n_layers).map(|_| vec![T::zero(); size]).collect(),
        }
    }
}

fn linear<T: Scalar>(data: &[T], x: &[T], rows: usize, din: usize, dout: usize, w: usize, bias: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * dout];
    gemm(rows, din, dout, x, false, &data[w..w + din * dout], false, &mut out, false);
    add_bias(&mut out, &data[bias..bias + dout]);
    out
}

/// Feeds `n` new tokens per sequence at positions `start..start+n` and
/// returns the final normalized hidden rows `[batch·n × d_model]`.
fn extend<T: Scalar>(params: &TransformerParams<T>, cache: &mut KvCache<T>, tokens: &[TokenId], start: usize, n: usize) -> Vec<T> {
    let cfg = &params.config;
    let (d, f, heads, ctx_len) = (cfg.d_model, cfg.d_ff, cfg.n_heads, cfg.context_length);
    let hd = d / heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let o = &params.offsets;
    let data = &params.data;
    let batch = cache.batch;
    let rows = batch * n;
    let mut x = vec![T::zero(); rows * d];
    for (r, &tok) in tokens.iter().enumerate() {
        let pos = start + r % n;
        let e = &data[o.tok_emb + tok as usize * d..][..d];
        let p = &data[o.pos_emb + pos * d..][..d];
        for (i, xi) in x[r * d..(r + 1) * d].iter_mut().enumerate() {
            *xi = e[i] + p[i];
        }
    }
    let mut h = vec![T::zero(); rows * d];
    let mut probs = vec![T::zero(); ctx_len];
    for (l, bo) in o.blocks.iter().enumerate() {
        layer_norm_rows(&x, d, &data[bo.ln1_g..bo.ln1_g + d], &data[bo.ln1_b..bo.ln1_b + d], &mut h);
        let q = linear(data, &h, rows, d, d, bo.wq, bo.bq);
        let k = linear(data, &h, rows, d, d, bo.wk, bo.bk);
        let v = linear(data, &h, rows, d, d, bo.wv, bo.bv);
        let (ck, cv) = (&mut cache.keys[l], &mut cache.values[l]);
        for b in 0..batch {
            for t in 0..n {
                let dst = (b * ctx_len + start + t) * d;
                let src = (b * n + t) * d;
                ck[dst..dst + d].copy_from_slice(&k[src..src + d]);
                cv[dst..dst + d].copy_from_slice(&v[src..src + d]);
            }
        }
        let mut ctx = vec![T::zero(); rows * d];
        for b in 0..batch {
            for hh in 0..heads {
                let kv = b * ctx_len * d + hh * hd;
                for t in 0..n {
                    let r = (b * n + t) * d + hh * hd;
                    attend(&q[r..r + hd], &ck[kv..], &cv[kv..], d, start + t + 1, scale, &mut probs, &mut ctx[r..r + hd]);
                }
            }
        }
        let a = linear(data, &ctx, rows, d, d, bo.wo, bo.bo);
        x.iter_mut().zip(&a).for_each(|(xi, &ai)| *xi = *xi + ai);
        layer_norm_rows(&x, d, &data[bo.ln2_g..bo.ln2_g + d], &data[bo.ln2_b..bo.ln2_b + d], &mut h);
        let u = linear(data, &h, rows, d, f, bo.w_fc, bo.b_fc);
        let mut g = vec![T::zero(); rows * f];
        gelu(&u, &mut g);
        let m = linear(data, &g, rows, f, d, bo.w_proj, bo.b_proj);
        x.iter_mut().zip(&m).for_each(|(xi, &mi)| *xi = *xi + mi);
    }
    layer_norm_rows(&x, d, &data[o.lnf_g..o.lnf_g + d], &data[o.lnf_b..o.lnf_b + d], &mut h);
    h
}

/// Logits `[len × vocab]` for one sequence; row `t` depends only on tokens
/// `0..=t`.
pub fn forward_logits<T: Scalar>(params: &TransformerParams<T>, tokens: &[TokenId]) -> Result<Vec<T>, ModelError> {
    let context = params.config.context_length;
    if tokens.len() > context {
        return Err(ModelError::Length { len: tokens.len(), context });
    }
    check_tokens(params, tokens)?;
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let mut cache = KvCache::new(params, 1);
    let h = extend(params, &mut cache, tokens, 0, tokens.len());
    Ok(project_head(params, &h, tokens.len()))
}

/// Appends argmax tokens (lowest id on ties) until `eos` or `max_new`
/// tokens; the result excludes the prompt and includes `eos` if emitted.
pub fn greedy_decode<T: Scalar>(
    params: &TransformerParams<T>,
    prompt: &[TokenId],
    max_new: usize,
    eos: TokenId,
) -> Result<Vec<TokenId>, ModelError> {
    Ok(decode_batch(params, &[prompt.to_vec()], max_new, eos)?.remove(0))
}

/// Greedy decoding of many prompts, batched by prompt length. Output order
/// follows input order and matches per-prompt [`greedy_decode`].
pub fn decode_batch<T: Scalar>(
    params: &TransformerParams<T>,
    prompts: &[Vec<TokenId>],
    max_new: usize,
    eos: TokenId,
) -> Result<Vec<Vec<TokenId>>, ModelError> {
    let context = params.config.context_length;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in prompts.iter().enumerate() {
        if p.is_empty() {
            return Err(ModelError::Config("cannot decode from an empty prompt".into()));
        }
        if p.len() + max_new > context {
            return Err(ModelError::Length { len: p.len() + max_new, context });
        }
        check_tokens(params, p)?;
        groups.entry(p.len()).or_default().push(i);
    }
    check_tokens(params, &[eos])?;
    let mut out = vec![Vec::new(); prompts.len()];
    for (len, idx) in groups {
        for chunk in idx.chunks(DECODE_BATCH) {
            let tokens: Vec<TokenId> = chunk.iter().flat_map(|&i| prompts[i].iter().copied()).collect();
            for (&i, gen) in chunk.iter().zip(decode_group(params, &tokens, chunk.len(), len, max_new, eos)) {
                out[i] = gen;
            }
        }
    }
    Ok(out)
}

fn decode_group<T: Scalar>(
    params: &TransformerParams<T>,
    prompts: &[TokenId],
    batch: usize,
    len: usize,
    max_new: usize,
    eos: TokenId,
) -> Vec<Vec<TokenId>> {
    let (d, v) = (params.config.d_model, params.config.vocab_size);
    let mut out = vec![Vec::with_capacity(max_new); batch];
    if max_new == 0 {
        return out;
    }
    let mut cache = KvCache::new(params, batch);
    let h = extend(params, &mut cache, prompts, 0, len);
    let mut last = vec![T::zero(); batch * d];
    for b in 0..batch {
        let r = (b * len + len - 1) * d;
        last[b * d..(b + 1) * d].copy_from_slice(&h[r..r + d]);
    }
    let mut done = vec![false; batch];
    let mut pos = len;
    for step in 1..=max_new {
        let logits = project_head(params, &last, batch);
        let next: Vec<TokenId> = logits.chunks_exact(v).map(|row| argmax(row) as TokenId).collect();
        for b in 0..batch {
            if !done[b] {
                out[b].push(next[b]);
                done[b] = next[b] == eos;
            }
        }
        if step == max_new || done.iter().all(|&x| x) {
            break;
        }
        last = extend(params, &mut cache, &next, pos, 1);
        pos += 1;
    }
    out
}
