//! Batched training pass: forward with activation caches, prompt-masked
//! cross-entropy, and the matching backward pass.

use super::ops::{
    accumulate_colsum, add_bias, attend, gelu, gelu_backward, layer_norm, layer_norm_backward, softmax_in_place,
    NormCache,
};
use super::params::BlockOffsets;
use super::{gemm, ModelError, Scalar, TransformerParams};
use crate::numeral::{EncodedSample, TokenId};

/// Right-padded full sequences (prompt, answer, EOS) with a loss mask that
/// is true exactly on answer and EOS positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    pub tokens: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn from_samples(samples: &[&EncodedSample], pad: TokenId) -> Self {
        let seq_len = samples.iter().map(|s| s.len()).max().unwrap_or(0);
        let b = samples.len();
        let mut tokens = vec![pad; b * seq_len];
        let mut loss_mask = vec![false; b * seq_len];
        let mut lengths = Vec::with_capacity(b);
        for (i, s) in samples.iter().enumerate() {
            let row = i * seq_len;
            let p = s.prompt.len();
            tokens[row..row + p].copy_from_slice(&s.prompt);
            tokens[row + p..row + s.len()].copy_from_slice(&s.answer);
            loss_mask[row + p..row + s.len()].iter_mut().for_each(|m| *m = true);
            lengths.push(s.len());
        }
        Self { batch_size: b, seq_len, tokens, loss_mask, lengths }
    }

    /// Inputs are positions `0..seq_len-1`; position `t` predicts token `t+1`.
    pub fn input_len(&self) -> usize {
        self.seq_len.saturating_sub(1)
    }

    pub fn inputs(&self) -> Vec<TokenId> {
        let n = self.input_len();
        self.tokens.chunks(self.seq_len.max(1)).flat_map(|row| row[..n].iter().copied()).collect()
    }

    /// `(input row, target token)` for each masked-in position.
    pub fn targets(&self) -> Vec<(usize, TokenId)> {
        let n = self.input_len();
        let mut out = Vec::new();
        for b in 0..self.batch_size {
            for t in 1..self.seq_len {
                let i = b * self.seq_len + t;
                if self.loss_mask[i] {
                    out.push((b * n + t - 1, self.tokens[i]));
                }
            }
        }
        out
    }

    pub fn mask_count(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

pub(crate) fn check_tokens<T: Scalar>(params: &TransformerParams<T>, tokens: &[TokenId]) -> Result<(), ModelError> {
    let vocab = params.config.vocab_size;
    match tokens.iter().find(|&&t| t as usize >= vocab) {
        Some(&token) => Err(ModelError::Token { token, vocab }),
        None => Ok(()),
    }
}

struct BlockTrace<T> {
    ln1: NormCache<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    ln2: NormCache<T>,
    h2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

struct Trace<T> {
    batch: usize,
    len: usize,
    tokens: Vec<TokenId>,
    blocks: Vec<BlockTrace<T>>,
    lnf: NormCache<T>,
    hf: Vec<T>,
}

/// Causal self-attention over `batch` sequences of `len` positions each.
#[allow(clippy::too_many_arguments)]
fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    batch: usize,
    len: usize,
    d: usize,
    heads: usize,
    probs: &mut [T],
    ctx: &mut [T],
) {
    let hd = d / heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    for b in 0..batch {
        let base = b * len * d;
        for h in 0..heads {
            let col = base + h * hd;
            for t in 0..len {
                let p = &mut probs[((b * heads + h) * len + t) * len..][..len];
                let qr = &q[col + t * d..col + t * d + hd];
                let c = &mut ctx[col + t * d..col + t * d + hd];
                attend(qr, &k[col..], &v[col..], d, t + 1, scale, p, c);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn attention_backward<T: Scalar>(
    dctx: &[T],
    trace: &BlockTrace<T>,
    batch: usize,
    len: usize,
    d: usize,
    heads: usize,
    dq: &mut [T],
    dk: &mut [T],
    dv: &mut [T],
) {
    let hd = d / heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut dp = vec![T::zero(); len];
    for b in 0..batch {
        let base = b * len * d;
        for h in 0..heads {
            let col = base + h * hd;
            for t in 0..len {
                let p = &trace.probs[((b * heads + h) * len + t) * len..][..=t];
                let dc = &dctx[col + t * d..col + t * d + hd];
                let mut dot = T::zero();
                for j in 0..=t {
                    let vj = &trace.v[col + j * d..col + j * d + hd];
                    dp[j] = dc.iter().zip(vj).map(|(&a, &b)| a * b).sum::<T>();
                    dot = dot + p[j] * dp[j];
                    let dvj = &mut dv[col + j * d..col + j * d + hd];
                    for (g, &c) in dvj.iter_mut().zip(dc) {
                        *g = *g + p[j] * c;
                    }
                }
                let qt = &trace.q[col + t * d..col + t * d + hd];
                for j in 0..=t {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    let kj = &trace.k[col + j * d..col + j * d + hd];
                    let dqt = &mut dq[col + t * d..col + t * d + hd];
                    for (g, &kk) in dqt.iter_mut().zip(kj) {
                        *g = *g + ds * kk;
                    }
                    let dkj = &mut dk[col + j * d..col + j * d + hd];
                    for (g, &qq) in dkj.iter_mut().zip(qt) {
                        *g = *g + ds * qq;
                    }
                }
            }
        }
    }
}

/// `out = x · W + b` with `W` at `w` (`[din, dout]`) and `b` at `bias`.
fn linear<T: Scalar>(data: &[T], x: &[T], rows: usize, din: usize, dout: usize, w: usize, bias: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * dout];
    gemm(rows, din, dout, x, false, &data[w..w + din * dout], false, &mut out, false);
    add_bias(&mut out, &data[bias..bias + dout]);
    out
}

/// Accumulates the gradients of `out = x · W + b`, adding `dy · Wᵀ` into `dx`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Scalar>(
    data: &[T],
    grads: &mut [T],
    x: &[T],
    dy: &[T],
    rows: usize,
    din: usize,
    dout: usize,
    w: usize,
    bias: usize,
    dx: &mut [T],
) {
    gemm(din, rows, dout, x, true, dy, false, &mut grads[w..w + din * dout], true);
    accumulate_colsum(dy, &mut grads[bias..bias + dout]);
    gemm(rows, dout, din, dy, false, &data[w..w + din * dout], true, dx, true);
}

fn forward_trace<T: Scalar>(params: &TransformerParams<T>, tokens: &[TokenId], batch: usize, len: usize) -> Trace<T> {
    let cfg = &params.config;
    let (d, f, heads) = (cfg.d_model, cfg.d_ff, cfg.n_heads);
    let o = &params.offsets;
    let data = &params.data;
    let rows = batch * len;
    let mut x = vec![T::zero(); rows * d];
    for (r, &tok) in tokens.iter().enumerate() {
        let pos = r % len;
        let e = &data[o.tok_emb + tok as usize * d..][..d];
        let p = &data[o.pos_emb + pos * d..][..d];
        for (i, xi) in x[r * d..(r + 1) * d].iter_mut().enumerate() {
            *xi = e[i] + p[i];
        }
    }
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for bo in &o.blocks {
        let bo: &BlockOffsets = bo;
        let mut h1 = vec![T::zero(); rows * d];
        let ln1 = layer_norm(&x, d, &data[bo.ln1_g..bo.ln1_g + d], &data[bo.ln1_b..bo.ln1_b + d], &mut h1);
        let q = linear(data, &h1, rows, d, d, bo.wq, bo.bq);
        let k = linear(data, &h1, rows, d, d, bo.wk, bo.bk);
        let v = linear(data, &h1, rows, d, d, bo.wv, bo.bv);
        let mut probs = vec![T::zero(); batch * heads * len * len];
        let mut ctx = vec![T::zero(); rows * d];
        attention_forward(&q, &k, &v, batch, len, d, heads, &mut probs, &mut ctx);
        let a = linear(data, &ctx, rows, d, d, bo.wo, bo.bo);
        x.iter_mut().zip(&a).for_each(|(xi, &ai)| *xi = *xi + ai);
        let mut h2 = vec![T::zero(); rows * d];
        let ln2 = layer_norm(&x, d, &data[bo.ln2_g..bo.ln2_g + d], &data[bo.ln2_b..bo.ln2_b + d], &mut h2);
        let u = linear(data, &h2, rows, d, f, bo.w_fc, bo.b_fc);
        let mut g = vec![T::zero(); rows * f];
        gelu(&u, &mut g);
        let m = linear(data, &g, rows, f, d, bo.w_proj, bo.b_proj);
        x.iter_mut().zip(&m).for_each(|(xi, &mi)| *xi = *xi + mi);
        blocks.push(BlockTrace { ln1, h1, q, k, v, probs, ctx, ln2, h2, u, g });
    }
    let mut hf = vec![T::zero(); rows * d];
    let lnf = layer_norm(&x, d, &data[o.lnf_g..o.lnf_g + d], &data[o.lnf_b..o.lnf_b + d], &mut hf);
    Trace { batch, len, tokens: tokens.to_vec(), blocks, lnf, hf }
}

/// Logits `[rows.len() × vocab]` for the selected rows of the final hidden
/// states; also returns the gathered hidden rows.
pub(crate) fn head_logits<T: Scalar>(params: &TransformerParams<T>, hf: &[T], rows: &[usize]) -> (Vec<T>, Vec<T>) {
    let d = params.config.d_model;
    let mut hsel = vec![T::zero(); rows.len() * d];
    for (i, &r) in rows.iter().enumerate() {
        hsel[i * d..(i + 1) * d].copy_from_slice(&hf[r * d..(r + 1) * d]);
    }
    let logits = project_head(params, &hsel, rows.len());
    (logits, hsel)
}

pub(crate) fn project_head<T: Scalar>(params: &TransformerParams<T>, h: &[T], m: usize) -> Vec<T> {
    let (d, v) = (params.config.d_model, params.config.vocab_size);
    let o = &params.offsets;
    let mut logits = vec![T::zero(); m * v];
    match o.head {
        Some(w) => gemm(m, d, v, h, false, &params.data[w..w + d * v], false, &mut logits, false),
        None => gemm(m, d, v, h, false, &params.data[o.tok_emb..o.tok_emb + v * d], true, &mut logits, false),
    }
    logits
}

/// Mean cross-entropy over rows of `logits`; converts `logits` into
/// `d loss / d logits` in place.
fn cross_entropy<T: Scalar>(logits: &mut [T], targets: &[TokenId], v: usize) -> f64 {
    let m = targets.len();
    let inv_m = T::of(1.0 / m as f64);
    let mut total = 0.0f64;
    for (row, &t) in logits.chunks_exact_mut(v).zip(targets) {
        softmax_in_place(row);
        total -= row[t as usize].as_f64().max(f64::MIN_POSITIVE).ln();
        row[t as usize] = row[t as usize] - T::one();
        row.iter_mut().for_each(|g| *g = *g * inv_m);
    }
    total / m as f64
}

fn prepare<T: Scalar>(params: &TransformerParams<T>, batch: &Batch) -> Result<(Vec<usize>, Vec<TokenId>), ModelError> {
    if batch.seq_len > params.config.context_length {
        return Err(ModelError::Length { len: batch.seq_len, context: params.config.context_length });
    }
    check_tokens(params, &batch.tokens)?;
    let (rows, targets): (Vec<usize>, Vec<TokenId>) = batch.targets().into_iter().unzip();
    if rows.is_empty() {
        return Err(ModelError::DegenerateBatch);
    }
    Ok((rows, targets))
}

/// Mean next-token cross-entropy over masked-in positions.
pub fn loss<T: Scalar>(params: &TransformerParams<T>, batch: &Batch) -> Result<f64, ModelError> {
    let (rows, targets) = prepare(params, batch)?;
    let trace = forward_trace(params, &batch.inputs(), batch.batch_size, batch.input_len());
    let (mut logits, _) = head_logits(params, &trace.hf, &rows);
    Ok(cross_entropy(&mut logits, &targets, params.config.vocab_size))
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_grad<T: Scalar>(params: &TransformerParams<T>, batch: &Batch) -> Result<(f64, Vec<T>), ModelError> {
    let (rows, targets) = prepare(params, batch)?;
    let trace = forward_trace(params, &batch.inputs(), batch.batch_size, batch.input_len());
    let (mut dlogits, hsel) = head_logits(params, &trace.hf, &rows);
    let loss = cross_entropy(&mut dlogits, &targets, params.config.vocab_size);
    let grads = backward(params, &trace, &rows, &hsel, &dlogits);
    Ok((loss, grads))
}

fn backward<T: Scalar>(
    params: &TransformerParams<T>,
    trace: &Trace<T>,
    rows: &[usize],
    hsel: &[T],
    dlogits: &[T],
) -> Vec<T> {
    let cfg = &params.config;
    let (d, f, v, heads) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.n_heads);
    let o = &params.offsets;
    let data = &params.data;
    let mut grads = params.zeros_like();
    let m = rows.len();
    let n_rows = trace.batch * trace.len;

    let mut dhsel = vec![T::zero(); m * d];
    match o.head {
        Some(w) => {
            gemm(d, m, v, hsel, true, dlogits, false, &mut grads[w..w + d * v], true);
            gemm(m, v, d, dlogits, false, &data[w..w + d * v], true, &mut dhsel, false);
        }
        None => {
            let e = o.tok_emb;
            gemm(v, m, d, dlogits, true, hsel, false, &mut grads[e..e + v * d], true);
            gemm(m, v, d, dlogits, false, &data[e..e + v * d], false, &mut dhsel, false);
        }
    }
    let mut dhf = vec![T::zero(); n_rows * d];
    for (i, &r) in rows.iter().enumerate() {
        dhf[r * d..(r + 1) * d].copy_from_slice(&dhsel[i * d..(i + 1) * d]);
    }
    let mut dx = vec![T::zero(); n_rows * d];
    {
        let (lo, hi) = grads.split_at_mut(o.lnf_b);
        layer_norm_backward(&dhf, d, &trace.lnf, &data[o.lnf_g..o.lnf_g + d], &mut lo[o.lnf_g..o.lnf_g + d], &mut hi[..d], &mut dx);
    }

    for (bo, bt) in o.blocks.iter().zip(&trace.blocks).rev() {
        // Feed-forward branch.
        let mut dg = vec![T::zero(); n_rows * f];
        linear_backward(data, &mut grads, &bt.g, &dx, n_rows, f, d, bo.w_proj, bo.b_proj, &mut dg);
        gelu_backward(&bt.u, &mut dg);
        let mut dh2 = vec![T::zero(); n_rows * d];
        linear_backward(data, &mut grads, &bt.h2, &dg, n_rows, d, f, bo.w_fc, bo.b_fc, &mut dh2);
        {
            let (lo, hi) = grads.split_at_mut(bo.ln2_b);
            layer_norm_backward(&dh2, d, &bt.ln2, &data[bo.ln2_g..bo.ln2_g + d], &mut lo[bo.ln2_g..bo.ln2_g + d], &mut hi[..d], &mut dx);
        }
        // Attention branch.
        let mut dctx = vec![T::zero(); n_rows * d];
        linear_backward(data, &mut grads, &bt.ctx, &dx, n_rows, d, d, bo.wo, bo.bo, &mut dctx);
        let (mut dq, mut dk, mut dv) = (vec![T::zero(); n_rows * d], vec![T::zero(); n_rows * d], vec![T::zero(); n_rows * d]);
        attention_backward(&dctx, bt, trace.batch, trace.len, d, heads, &mut dq, &mut dk, &mut dv);
        let mut dh1 = vec![T::zero(); n_rows * d];
        linear_backward(data, &mut grads, &bt.h1, &dq, n_rows, d, d, bo.wq, bo.bq, &mut dh1);
        linear_backward(data, &mut grads, &bt.h1, &dk, n_rows, d, d, bo.wk, bo.bk, &mut dh1);
        linear_backward(data, &mut grads, &bt.h1, &dv, n_rows, d, d, bo.wv, bo.bv, &mut dh1);
        {
            let (lo, hi) = grads.split_at_mut(bo.ln1_b);
            layer_norm_backward(&dh1, d, &bt.ln1, &data[bo.ln1_g..bo.ln1_g + d], &mut lo[bo.ln1_g..bo.ln1_g + d], &mut hi[..d], &mut dx);
        }
    }

    for (r, &tok) in trace.tokens.iter().enumerate() {
        let pos = r % trace.len;
        let dxr = &dx[r * d..(r + 1) * d];
        let e = o.tok_emb + tok as usize * d;
        for (g, &x) in grads[e..e + d].iter_mut().zip(dxr) {
            *g = *g + x;
        }
        let p = o.pos_emb + pos * d;
        for (g, &x) in grads[p..p + d].iter_mut().zip(dxr) {
            *g = *g + x;
        }
    }
    grads
}

/// Logits at every input position of every sequence, `[batch·len × vocab]`.
#[cfg(test)]
pub(crate) fn logits_all<T: Scalar>(params: &TransformerParams<T>, tokens: &[TokenId], batch: usize, len: usize) -> Vec<T> {
    let trace = forward_trace(params, tokens, batch, len);
    let rows: Vec<usize> = (0..batch * len).collect();
    head_logits(params, &trace.hf, &rows).0
}
