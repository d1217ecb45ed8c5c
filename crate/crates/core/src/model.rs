//! One-layer decoder-only transformer for the 4-token modular arithmetic
//! format, with a hand-written backward pass.
//!
//! The pipeline is: token embedding + learned positional embedding, causal
//! multi-head attention (no layernorm, no biases), residual add, two-layer
//! ReLU MLP, residual add, then an unembedding of the final ("=") position
//! into the P answer classes. Loss and gradients cover only the final
//! position, so the training path computes queries, attention, the MLP and
//! the unembedding there alone; keys and values are needed at every
//! position.
//!
//! Parameters live in one flat vector with a fixed section layout so that
//! the optimizer, the norm accounting and checkpointing can treat the model
//! as a plain `&[T]`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::ExampleRow;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{dot, matmul_nn, matmul_nt, matmul_tn};

pub const SEQ_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_head: usize,
    pub n_heads: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub n_answer_classes: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// The width-128 configuration used for the modulus-113 experiments.
    pub fn standard(modulus: usize, seed: u64) -> Self {
        ModelConfig {
            d_model: 128,
            d_head: 32,
            n_heads: 4,
            d_mlp: 512,
            vocab_size: modulus + 2,
            n_answer_classes: modulus,
            init_scale: 1.0,
            seed,
        }
    }

    /// A small configuration for finite-difference tests and smoke runs.
    pub fn tiny(modulus: usize, seed: u64) -> Self {
        ModelConfig {
            d_model: 8,
            d_head: 4,
            n_heads: 2,
            d_mlp: 16,
            vocab_size: modulus + 2,
            n_answer_classes: modulus,
            init_scale: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads * self.d_head != self.d_model {
            return Err(Error::InvalidConfig(format!(
                "n_heads ({}) * d_head ({}) must equal d_model ({})",
                self.n_heads, self.d_head, self.d_model
            )));
        }
        if self.d_model == 0 || self.d_mlp == 0 || self.vocab_size < 3 || self.n_answer_classes < 2
        {
            return Err(Error::InvalidConfig(
                "model dimensions must be positive and vocab must cover answers + 2 markers"
                    .into(),
            ));
        }
        if self.n_answer_classes + 2 != self.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "vocab_size ({}) must be n_answer_classes ({}) + 2",
                self.vocab_size, self.n_answer_classes
            )));
        }
        Ok(())
    }
}

/// Named parameter sections, in flat-buffer order. The checkpoint format
/// writes tensors in exactly this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Embed,
    Pos,
    WQ,
    WK,
    WV,
    WO,
    WIn,
    WOut,
    WU,
}

pub const SECTIONS: [Section; 9] = [
    Section::Embed,
    Section::Pos,
    Section::WQ,
    Section::WK,
    Section::WV,
    Section::WO,
    Section::WIn,
    Section::WOut,
    Section::WU,
];

impl Section {
    pub fn name(self) -> &'static str {
        match self {
            Section::Embed => "embed",
            Section::Pos => "pos_embed",
            Section::WQ => "w_q",
            Section::WK => "w_k",
            Section::WV => "w_v",
            Section::WO => "w_o",
            Section::WIn => "w_in",
            Section::WOut => "w_out",
            Section::WU => "w_unembed",
        }
    }

    /// (rows, cols) of the row-major tensor for this section.
    pub fn shape(self, cfg: &ModelConfig) -> (usize, usize) {
        let d = cfg.d_model;
        match self {
            Section::Embed => (cfg.vocab_size, d),
            Section::Pos => (SEQ_LEN, d),
            Section::WQ | Section::WK | Section::WV => (d, cfg.n_heads * cfg.d_head),
            Section::WO => (cfg.n_heads * cfg.d_head, d),
            Section::WIn => (d, cfg.d_mlp),
            Section::WOut => (cfg.d_mlp, d),
            Section::WU => (d, cfg.n_answer_classes),
        }
    }

    pub fn len(self, cfg: &ModelConfig) -> usize {
        let (r, c) = self.shape(cfg);
        r * c
    }
}

fn section_offset(cfg: &ModelConfig, target: Section) -> usize {
    let mut off = 0;
    for s in SECTIONS {
        if s == target {
            return off;
        }
        off += s.len(cfg);
    }
    unreachable!()
}

pub fn total_params(cfg: &ModelConfig) -> usize {
    SECTIONS.iter().map(|s| s.len(cfg)).sum()
}

/// All model parameters as one flat vector; also reused for gradients.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub cfg: ModelConfig,
    pub data: Vec<T>,
}

impl<T: Real> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        ModelParams {
            cfg: *cfg,
            data: vec![T::zero(); total_params(cfg)],
        }
    }

    pub fn section(&self, s: Section) -> &[T] {
        let off = section_offset(&self.cfg, s);
        &self.data[off..off + s.len(&self.cfg)]
    }

    pub fn section_mut(&mut self, s: Section) -> &mut [T] {
        let off = section_offset(&self.cfg, s);
        &mut self.data[off..off + s.len(&self.cfg)]
    }

    /// Euclidean norm over every parameter, accumulated in f64.
    pub fn param_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|x| {
                let v = x.to_f64_lossy();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_finite(&self) -> Result<()> {
        for s in SECTIONS {
            if self.section(s).iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite parameter in {}",
                    s.name()
                )));
            }
        }
        Ok(())
    }
}

/// Draws every parameter i.i.d. normal with std `init_scale / sqrt(d_model)`,
/// deterministically in `cfg.seed`.
pub fn init_params<T: Real>(cfg: &ModelConfig) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let std = cfg.init_scale / (cfg.d_model as f64).sqrt();
    let mut params = ModelParams::zeros(cfg);
    if std > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, std).expect("positive std");
        for x in params.data.iter_mut() {
            *x = T::of(normal.sample(&mut rng));
        }
    }
    Ok(params)
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub tokens: Vec<u32>,
    pub labels: Vec<u32>,
    pub len: usize,
}

impl Batch {
    pub fn from_rows(rows: &[ExampleRow]) -> Self {
        let mut tokens = Vec::with_capacity(rows.len() * SEQ_LEN);
        let mut labels = Vec::with_capacity(rows.len());
        for r in rows {
            tokens.extend_from_slice(&r.tokens);
            labels.push(r.label);
        }
        Batch {
            tokens,
            labels,
            len: rows.len(),
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.tokens.len() != self.len * SEQ_LEN || self.labels.len() != self.len {
            return Err(Error::Precondition("batch buffer lengths inconsistent".into()));
        }
        if self.tokens.iter().any(|&t| t as usize >= cfg.vocab_size) {
            return Err(Error::Precondition("token id out of vocabulary".into()));
        }
        if self.labels.iter().any(|&l| l as usize >= cfg.n_answer_classes) {
            return Err(Error::Precondition("label out of answer range".into()));
        }
        Ok(())
    }
}

fn check_activations<T: Real>(name: &str, xs: &[T]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        Err(Error::Numerical(format!("NaN/Inf in activations at {name}")))
    } else {
        Ok(())
    }
}

/// Intermediate activations kept for the backward pass.
struct ForwardCache<T> {
    x: Vec<T>,       // (B*4) x d_model: embeddings + positions
    k: Vec<T>,       // (B*4) x d_model
    v: Vec<T>,       // (B*4) x d_model
    q: Vec<T>,       // B x d_model (final position only)
    attn_w: Vec<T>,  // B x n_heads x 4 softmax weights
    concat: Vec<T>,  // B x d_model concatenated head outputs
    resid1: Vec<T>,  // B x d_model
    h_pre: Vec<T>,   // B x d_mlp pre-ReLU
    resid2: Vec<T>,  // B x d_model
    logits: Vec<T>,  // B x n_answer_classes
}

fn forward_cached<T: Real>(params: &ModelParams<T>, batch: &Batch) -> Result<ForwardCache<T>> {
    let cfg = &params.cfg;
    batch.validate(cfg)?;
    let b = batch.len;
    let d = cfg.d_model;
    let (h, dh) = (cfg.n_heads, cfg.d_head);
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let embed = params.section(Section::Embed);
    let pos = params.section(Section::Pos);
    let mut x = vec![T::zero(); b * SEQ_LEN * d];
    for i in 0..b * SEQ_LEN {
        let tok = batch.tokens[i] as usize;
        let p = i % SEQ_LEN;
        let row = &mut x[i * d..(i + 1) * d];
        let e = &embed[tok * d..(tok + 1) * d];
        let pe = &pos[p * d..(p + 1) * d];
        for j in 0..d {
            row[j] = e[j] + pe[j];
        }
    }

    let mut k = vec![T::zero(); b * SEQ_LEN * d];
    let mut v = vec![T::zero(); b * SEQ_LEN * d];
    matmul_nn(&x, params.section(Section::WK), b * SEQ_LEN, d, d, &mut k);
    matmul_nn(&x, params.section(Section::WV), b * SEQ_LEN, d, d, &mut v);

    // Queries are only needed at the final position; gather those rows.
    let mut x_final = vec![T::zero(); b * d];
    for i in 0..b {
        x_final[i * d..(i + 1) * d]
            .copy_from_slice(&x[(i * SEQ_LEN + SEQ_LEN - 1) * d..(i * SEQ_LEN + SEQ_LEN) * d]);
    }
    let mut q = vec![T::zero(); b * d];
    matmul_nn(&x_final, params.section(Section::WQ), b, d, d, &mut q);

    // Attention at the final position attends over all 4 positions.
    let mut attn_w = vec![T::zero(); b * h * SEQ_LEN];
    let mut concat = vec![T::zero(); b * d];
    for i in 0..b {
        for hd in 0..h {
            let qs = &q[i * d + hd * dh..i * d + (hd + 1) * dh];
            let mut scores = [T::zero(); SEQ_LEN];
            for j in 0..SEQ_LEN {
                let ks = &k[(i * SEQ_LEN + j) * d + hd * dh..(i * SEQ_LEN + j) * d + (hd + 1) * dh];
                scores[j] = dot(qs, ks) * scale;
            }
            let mx = scores.iter().cloned().fold(scores[0], T::max);
            let mut z = T::zero();
            let mut w = [T::zero(); SEQ_LEN];
            for j in 0..SEQ_LEN {
                w[j] = (scores[j] - mx).exp();
                z += w[j];
            }
            let out = &mut concat[i * d + hd * dh..i * d + (hd + 1) * dh];
            for j in 0..SEQ_LEN {
                let wj = w[j] / z;
                attn_w[(i * h + hd) * SEQ_LEN + j] = wj;
                let vs = &v[(i * SEQ_LEN + j) * d + hd * dh..(i * SEQ_LEN + j) * d + (hd + 1) * dh];
                for l in 0..dh {
                    out[l] += wj * vs[l];
                }
            }
        }
    }

    let mut attn_out = vec![T::zero(); b * d];
    matmul_nn(&concat, params.section(Section::WO), b, d, d, &mut attn_out);
    let mut resid1 = x_final;
    for (r, a) in resid1.iter_mut().zip(&attn_out) {
        *r += *a;
    }

    let m = cfg.d_mlp;
    let mut h_pre = vec![T::zero(); b * m];
    matmul_nn(&resid1, params.section(Section::WIn), b, d, m, &mut h_pre);
    check_activations("mlp_hidden", &h_pre)?;
    let h_act: Vec<T> = h_pre.iter().map(|&x| x.max(T::zero())).collect();
    let mut mlp_out = vec![T::zero(); b * d];
    matmul_nn(&h_act, params.section(Section::WOut), b, m, d, &mut mlp_out);
    let mut resid2 = resid1.clone();
    for (r, o) in resid2.iter_mut().zip(&mlp_out) {
        *r += *o;
    }

    let c = cfg.n_answer_classes;
    let mut logits = vec![T::zero(); b * c];
    matmul_nn(&resid2, params.section(Section::WU), b, d, c, &mut logits);
    check_activations("unembed_logits", &logits)?;

    Ok(ForwardCache {
        x,
        k,
        v,
        q,
        attn_w,
        concat,
        resid1,
        h_pre,
        resid2,
        logits,
    })
}

/// Logits over the P answer classes at the final position, one row per
/// batch element.
pub fn forward<T: Real>(params: &ModelParams<T>, batch: &Batch) -> Result<Vec<T>> {
    Ok(forward_cached(params, batch)?.logits)
}

/// Mean cross-entropy at the final position and exact gradients for every
/// parameter. Weight decay is not included here; the optimizer applies it
/// decoupled.
pub fn loss_and_grads<T: Real>(
    params: &ModelParams<T>,
    batch: &Batch,
) -> Result<(T, ModelParams<T>)> {
    let cfg = &params.cfg;
    let cache = forward_cached(params, batch)?;
    let b = batch.len;
    let d = cfg.d_model;
    let (h, dh) = (cfg.n_heads, cfg.d_head);
    let m = cfg.d_mlp;
    let c = cfg.n_answer_classes;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let inv_b = T::of(1.0 / b as f64);

    // Softmax cross-entropy and dlogits = (softmax - onehot)/B.
    let mut loss = T::zero();
    let mut dlogits = vec![T::zero(); b * c];
    for i in 0..b {
        let row = &cache.logits[i * c..(i + 1) * c];
        let mx = row.iter().cloned().fold(row[0], T::max);
        let mut z = T::zero();
        for &l in row {
            z += (l - mx).exp();
        }
        let lse = mx + z.ln();
        let label = batch.labels[i] as usize;
        loss += lse - row[label];
        let drow = &mut dlogits[i * c..(i + 1) * c];
        for j in 0..c {
            drow[j] = (row[j] - lse).exp() * inv_b;
        }
        drow[label] -= inv_b;
    }
    loss *= inv_b;
    if !loss.is_finite() {
        return Err(Error::Numerical("NaN/Inf in cross-entropy loss".into()));
    }

    let mut grads = ModelParams::zeros(cfg);

    // Unembedding.
    matmul_tn(&cache.resid2, &dlogits, d, b, c, grads.section_mut(Section::WU));
    let mut dresid2 = vec![T::zero(); b * d];
    matmul_nt(&dlogits, params.section(Section::WU), b, c, d, &mut dresid2);

    // MLP.
    let h_act: Vec<T> = cache.h_pre.iter().map(|&x| x.max(T::zero())).collect();
    matmul_tn(&h_act, &dresid2, m, b, d, grads.section_mut(Section::WOut));
    let mut dh_act = vec![T::zero(); b * m];
    matmul_nt(&dresid2, params.section(Section::WOut), b, d, m, &mut dh_act);
    for (g, &pre) in dh_act.iter_mut().zip(&cache.h_pre) {
        if pre <= T::zero() {
            *g = T::zero();
        }
    }
    matmul_tn(&cache.resid1, &dh_act, d, b, m, grads.section_mut(Section::WIn));
    let mut dresid1 = vec![T::zero(); b * d];
    matmul_nt(&dh_act, params.section(Section::WIn), b, m, d, &mut dresid1);
    for (r, &u) in dresid1.iter_mut().zip(&dresid2) {
        *r += u; // residual path around the MLP
    }

    // Attention output projection.
    matmul_tn(&cache.concat, &dresid1, d, b, d, grads.section_mut(Section::WO));
    let mut dconcat = vec![T::zero(); b * d];
    matmul_nt(&dresid1, params.section(Section::WO), b, d, d, &mut dconcat);

    // Per-head attention backward.
    let mut dq = vec![T::zero(); b * d];
    let mut dk = vec![T::zero(); b * SEQ_LEN * d];
    let mut dv = vec![T::zero(); b * SEQ_LEN * d];
    for i in 0..b {
        for hd in 0..h {
            let col = hd * dh..(hd + 1) * dh;
            let dhead = &dconcat[i * d + col.start..i * d + col.end];
            let w = &cache.attn_w[(i * h + hd) * SEQ_LEN..(i * h + hd + 1) * SEQ_LEN];
            let mut dw = [T::zero(); SEQ_LEN];
            for j in 0..SEQ_LEN {
                let vs = &cache.v
                    [(i * SEQ_LEN + j) * d + col.start..(i * SEQ_LEN + j) * d + col.end];
                dw[j] = dot(dhead, vs);
                let dvj =
                    &mut dv[(i * SEQ_LEN + j) * d + col.start..(i * SEQ_LEN + j) * d + col.end];
                for l in 0..dh {
                    dvj[l] += w[j] * dhead[l];
                }
            }
            // softmax backward: ds_j = w_j (dw_j - sum_l w_l dw_l)
            let mut wd = T::zero();
            for j in 0..SEQ_LEN {
                wd += w[j] * dw[j];
            }
            let qs = &cache.q[i * d + col.start..i * d + col.end];
            let dqh = &mut dq[i * d + col.start..i * d + col.end];
            for j in 0..SEQ_LEN {
                let ds = w[j] * (dw[j] - wd) * scale;
                let ks = &cache.k
                    [(i * SEQ_LEN + j) * d + col.start..(i * SEQ_LEN + j) * d + col.end];
                for l in 0..dh {
                    dqh[l] += ds * ks[l];
                }
                let dkj =
                    &mut dk[(i * SEQ_LEN + j) * d + col.start..(i * SEQ_LEN + j) * d + col.end];
                for l in 0..dh {
                    dkj[l] += ds * qs[l];
                }
            }
        }
    }

    // Projections back to the residual stream.
    let mut x_final = vec![T::zero(); b * d];
    for i in 0..b {
        x_final[i * d..(i + 1) * d].copy_from_slice(
            &cache.x[(i * SEQ_LEN + SEQ_LEN - 1) * d..(i * SEQ_LEN + SEQ_LEN) * d],
        );
    }
    matmul_tn(&x_final, &dq, d, b, d, grads.section_mut(Section::WQ));
    matmul_tn(&cache.x, &dk, d, b * SEQ_LEN, d, grads.section_mut(Section::WK));
    matmul_tn(&cache.x, &dv, d, b * SEQ_LEN, d, grads.section_mut(Section::WV));

    let mut dx_final = dresid1; // skip connection from x_final into resid1
    let mut tmp = vec![T::zero(); b * d];
    matmul_nt(&dq, params.section(Section::WQ), b, d, d, &mut tmp);
    for (a, &t) in dx_final.iter_mut().zip(&tmp) {
        *a += t;
    }
    let mut dx = vec![T::zero(); b * SEQ_LEN * d];
    let mut tmp_all = vec![T::zero(); b * SEQ_LEN * d];
    matmul_nt(&dk, params.section(Section::WK), b * SEQ_LEN, d, d, &mut tmp_all);
    for (a, &t) in dx.iter_mut().zip(&tmp_all) {
        *a += t;
    }
    matmul_nt(&dv, params.section(Section::WV), b * SEQ_LEN, d, d, &mut tmp_all);
    for (a, &t) in dx.iter_mut().zip(&tmp_all) {
        *a += t;
    }
    for i in 0..b {
        let row = &mut dx[(i * SEQ_LEN + SEQ_LEN - 1) * d..(i * SEQ_LEN + SEQ_LEN) * d];
        let f = &dx_final[i * d..(i + 1) * d];
        for j in 0..d {
            row[j] += f[j];
        }
    }

    // Scatter into embedding and positional tables.
    {
        let gembed = grads.section_mut(Section::Embed);
        for i in 0..b * SEQ_LEN {
            let tok = batch.tokens[i] as usize;
            let src = &dx[i * d..(i + 1) * d];
            let dst = &mut gembed[tok * d..(tok + 1) * d];
            for j in 0..d {
                dst[j] += src[j];
            }
        }
    }
    {
        let gpos = grads.section_mut(Section::Pos);
        for i in 0..b * SEQ_LEN {
            let p = i % SEQ_LEN;
            let src = &dx[i * d..(i + 1) * d];
            let dst = &mut gpos[p * d..(p + 1) * d];
            for j in 0..d {
                dst[j] += src[j];
            }
        }
    }

    Ok((loss, grads))
}

/// Fraction of rows whose argmax logit equals the label; argmax ties break
/// toward the lowest class index.
pub fn predict_accuracy<T: Real>(params: &ModelParams<T>, rows: &[ExampleRow]) -> Result<f64> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let c = params.cfg.n_answer_classes;
    let mut correct = 0usize;
    for chunk in rows.chunks(2048) {
        let batch = Batch::from_rows(chunk);
        let logits = forward(params, &batch)?;
        for (i, row) in chunk.iter().enumerate() {
            let lrow = &logits[i * c..(i + 1) * c];
            let mut best = 0usize;
            for j in 1..c {
                if lrow[j] > lrow[best] {
                    best = j;
                }
            }
            if best == row.label as usize {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

/// Mean cross-entropy without gradients (chunked).
pub fn mean_loss<T: Real>(params: &ModelParams<T>, rows: &[ExampleRow]) -> Result<f64> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let c = params.cfg.n_answer_classes;
    let mut total = 0.0f64;
    for chunk in rows.chunks(2048) {
        let batch = Batch::from_rows(chunk);
        let logits = forward(params, &batch)?;
        for (i, row) in chunk.iter().enumerate() {
            let lrow = &logits[i * c..(i + 1) * c];
            let mx = lrow.iter().cloned().fold(lrow[0], T::max);
            let mut z = T::zero();
            for &l in lrow {
                z += (l - mx).exp();
            }
            let lse = (mx + z.ln()).to_f64_lossy();
            total += lse - lrow[row.label as usize].to_f64_lossy();
        }
    }
    Ok(total / rows.len() as f64)
}

/// Post-attention head outputs (before the output projection) at every
/// position, with the causal mask applied. Used to check that later tokens
/// cannot influence earlier positions.
pub fn attention_outputs<T: Real>(params: &ModelParams<T>, batch: &Batch) -> Result<Vec<T>> {
    let cfg = &params.cfg;
    batch.validate(cfg)?;
    let b = batch.len;
    let d = cfg.d_model;
    let (h, dh) = (cfg.n_heads, cfg.d_head);
    let scale = T::of(1.0 / (dh as f64).sqrt());

    let embed = params.section(Section::Embed);
    let pos = params.section(Section::Pos);
    let mut x = vec![T::zero(); b * SEQ_LEN * d];
    for i in 0..b * SEQ_LEN {
        let tok = batch.tokens[i] as usize;
        let p = i % SEQ_LEN;
        let row = &mut x[i * d..(i + 1) * d];
        let e = &embed[tok * d..(tok + 1) * d];
        let pe = &pos[p * d..(p + 1) * d];
        for j in 0..d {
            row[j] = e[j] + pe[j];
        }
    }
    let mut q = vec![T::zero(); b * SEQ_LEN * d];
    let mut k = vec![T::zero(); b * SEQ_LEN * d];
    let mut v = vec![T::zero(); b * SEQ_LEN * d];
    matmul_nn(&x, params.section(Section::WQ), b * SEQ_LEN, d, d, &mut q);
    matmul_nn(&x, params.section(Section::WK), b * SEQ_LEN, d, d, &mut k);
    matmul_nn(&x, params.section(Section::WV), b * SEQ_LEN, d, d, &mut v);

    let mut out = vec![T::zero(); b * SEQ_LEN * d];
    for i in 0..b {
        for p in 0..SEQ_LEN {
            for hd in 0..h {
                let col = hd * dh..(hd + 1) * dh;
                let qs = &q[(i * SEQ_LEN + p) * d + col.start..(i * SEQ_LEN + p) * d + col.end];
                let mut scores = vec![T::zero(); p + 1];
                for (j, s) in scores.iter_mut().enumerate() {
                    let ks =
                        &k[(i * SEQ_LEN + j) * d + col.start..(i * SEQ_LEN + j) * d + col.end];
                    *s = dot(qs, ks) * scale;
                }
                let mx = scores.iter().cloned().fold(scores[0], T::max);
                let mut z = T::zero();
                let w: Vec<T> = scores.iter().map(|&s| (s - mx).exp()).collect();
                for &wv in &w {
                    z += wv;
                }
                let o = &mut out[(i * SEQ_LEN + p) * d + col.start..(i * SEQ_LEN + p) * d + col.end];
                for (j, &wv) in w.iter().enumerate() {
                    let vs =
                        &v[(i * SEQ_LEN + j) * d + col.start..(i * SEQ_LEN + j) * d + col.end];
                    let a = wv / z;
                    for l in 0..dh {
                        o[l] += a * vs[l];
                    }
                }
            }
        }
    }
    Ok(out)
}
