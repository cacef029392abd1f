//! Decoder-only transformer backend, built from scratch in f64.
//!
//! Pre-normalization residual blocks with causally masked multi-head
//! attention and a GELU feed-forward of width 4E. Token and position
//! embeddings are summed. Training is AdamW on mean next-token
//! cross-entropy; the backward pass is written by hand and validated
//! against central finite differences.

use super::{ModelError, NextTokenModel};
use crate::corpus::Corpus;
use crate::pcfg::Pattern;
use crate::tokenizer::{TokenId, Vocabulary, DEFAULT_WINDOW, EOS, VOCAB_SIZE};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

type Mat = Array2<f64>;
type Vect = Array1<f64>;

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransformerConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub window: usize,
}

impl Default for TransformerConfig {
    /// Desk-scale defaults; `full_scale` holds the full-corpus configuration.
    fn default() -> Self {
        TransformerConfig {
            embed_dim: 64,
            layers: 2,
            heads: 2,
            window: DEFAULT_WINDOW,
        }
    }
}

impl TransformerConfig {
    /// Configuration sized for full leaked-corpus training rather than the
    /// desk-scale runs the tests use.
    pub fn full_scale() -> Self {
        TransformerConfig {
            embed_dim: 256,
            layers: 12,
            heads: 8,
            window: DEFAULT_WINDOW,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.layers == 0 || self.heads == 0 || self.window < 4 {
            return Err(ModelError::InvalidConfig(
                "embed_dim, layers, heads must be positive and window >= 4".into(),
            ));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 10,
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(ModelError::InvalidConfig(
                "batch size, epochs, and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerParams {
    ln1_g: Vect,
    ln1_b: Vect,
    w_qkv: Mat,
    b_qkv: Vect,
    w_o: Mat,
    b_o: Vect,
    ln2_g: Vect,
    ln2_b: Vect,
    w_fc: Mat,
    b_fc: Vect,
    w_proj: Mat,
    b_proj: Vect,
}

#[derive(Debug, Clone)]
struct Params {
    tok_emb: Mat,
    pos_emb: Mat,
    layers: Vec<LayerParams>,
    lnf_g: Vect,
    lnf_b: Vect,
    w_head: Mat,
    b_head: Vect,
}

impl Params {
    fn zeros(cfg: &TransformerConfig) -> Params {
        let e = cfg.embed_dim;
        let layer = || LayerParams {
            ln1_g: Vect::zeros(e),
            ln1_b: Vect::zeros(e),
            w_qkv: Mat::zeros((e, 3 * e)),
            b_qkv: Vect::zeros(3 * e),
            w_o: Mat::zeros((e, e)),
            b_o: Vect::zeros(e),
            ln2_g: Vect::zeros(e),
            ln2_b: Vect::zeros(e),
            w_fc: Mat::zeros((e, 4 * e)),
            b_fc: Vect::zeros(4 * e),
            w_proj: Mat::zeros((4 * e, e)),
            b_proj: Vect::zeros(e),
        };
        Params {
            tok_emb: Mat::zeros((VOCAB_SIZE, e)),
            pos_emb: Mat::zeros((cfg.window, e)),
            layers: (0..cfg.layers).map(|_| layer()).collect(),
            lnf_g: Vect::zeros(e),
            lnf_b: Vect::zeros(e),
            w_head: Mat::zeros((e, VOCAB_SIZE)),
            b_head: Vect::zeros(VOCAB_SIZE),
        }
    }

    fn init(cfg: &TransformerConfig, rng: &mut ChaCha20Rng) -> Params {
        let mut params = Params::zeros(cfg);
        let mut normal = |m: &mut [f64]| {
            for x in m {
                // Box-Muller; scaled-normal init.
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen::<f64>();
                *x = INIT_STD
                    * (-2.0 * u1.ln()).sqrt()
                    * (2.0 * std::f64::consts::PI * u2).cos();
            }
        };
        normal(params.tok_emb.as_slice_mut().unwrap());
        normal(params.pos_emb.as_slice_mut().unwrap());
        for layer in &mut params.layers {
            normal(layer.w_qkv.as_slice_mut().unwrap());
            normal(layer.w_o.as_slice_mut().unwrap());
            normal(layer.w_fc.as_slice_mut().unwrap());
            normal(layer.w_proj.as_slice_mut().unwrap());
            layer.ln1_g.fill(1.0);
            layer.ln2_g.fill(1.0);
        }
        normal(params.w_head.as_slice_mut().unwrap());
        params.lnf_g.fill(1.0);
        params
    }

    /// Tensors in the documented checkpoint order. The same order defines
    /// the flat parameter index used by the gradient check.
    fn flat(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.tok_emb.as_slice().unwrap(),
            self.pos_emb.as_slice().unwrap(),
        ];
        for l in &self.layers {
            out.push(l.ln1_g.as_slice().unwrap());
            out.push(l.ln1_b.as_slice().unwrap());
            out.push(l.w_qkv.as_slice().unwrap());
            out.push(l.b_qkv.as_slice().unwrap());
            out.push(l.w_o.as_slice().unwrap());
            out.push(l.b_o.as_slice().unwrap());
            out.push(l.ln2_g.as_slice().unwrap());
            out.push(l.ln2_b.as_slice().unwrap());
            out.push(l.w_fc.as_slice().unwrap());
            out.push(l.b_fc.as_slice().unwrap());
            out.push(l.w_proj.as_slice().unwrap());
            out.push(l.b_proj.as_slice().unwrap());
        }
        out.push(self.lnf_g.as_slice().unwrap());
        out.push(self.lnf_b.as_slice().unwrap());
        out.push(self.w_head.as_slice().unwrap());
        out.push(self.b_head.as_slice().unwrap());
        out
    }

    fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.tok_emb.as_slice_mut().unwrap(),
            self.pos_emb.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            out.push(l.ln1_g.as_slice_mut().unwrap());
            out.push(l.ln1_b.as_slice_mut().unwrap());
            out.push(l.w_qkv.as_slice_mut().unwrap());
            out.push(l.b_qkv.as_slice_mut().unwrap());
            out.push(l.w_o.as_slice_mut().unwrap());
            out.push(l.b_o.as_slice_mut().unwrap());
            out.push(l.ln2_g.as_slice_mut().unwrap());
            out.push(l.ln2_b.as_slice_mut().unwrap());
            out.push(l.w_fc.as_slice_mut().unwrap());
            out.push(l.b_fc.as_slice_mut().unwrap());
            out.push(l.w_proj.as_slice_mut().unwrap());
            out.push(l.b_proj.as_slice_mut().unwrap());
        }
        out.push(self.lnf_g.as_slice_mut().unwrap());
        out.push(self.lnf_b.as_slice_mut().unwrap());
        out.push(self.w_head.as_slice_mut().unwrap());
        out.push(self.b_head.as_slice_mut().unwrap());
        out
    }

    fn len(&self) -> usize {
        self.flat().iter().map(|s| s.len()).sum()
    }

    fn get(&self, index: usize) -> f64 {
        let mut idx = index;
        for slice in self.flat() {
            if idx < slice.len() {
                return slice[idx];
            }
            idx -= slice.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn add_at(&mut self, index: usize, delta: f64) {
        let mut idx = index;
        for slice in self.flat_mut() {
            if idx < slice.len() {
                slice[idx] += delta;
                return;
            }
            idx -= slice.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn accumulate(&mut self, other: &Params) {
        for (dst, src) in self.flat_mut().into_iter().zip(other.flat()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for slice in self.flat_mut() {
            for x in slice {
                *x *= factor;
            }
        }
    }
}

struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Params,
    v: Params,
}

impl AdamW {
    fn new(cfg: &TransformerConfig, train: &TrainConfig) -> AdamW {
        AdamW {
            lr: train.learning_rate,
            beta1: train.beta1,
            beta2: train.beta2,
            eps: 1e-8,
            weight_decay: train.weight_decay,
            step: 0,
            m: Params::zeros(cfg),
            v: Params::zeros(cfg),
        }
    }

    fn update(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .flat_mut()
            .into_iter()
            .zip(grads.flat())
            .zip(self.m.flat_mut())
            .zip(self.v.flat_mut())
        {
            for i in 0..p.len() {
                // Decoupled weight decay.
                p[i] -= self.lr * self.weight_decay * p[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

struct LnCache {
    xhat: Mat,
    inv_std: Vect,
}

struct LayerCache {
    ln1: LnCache,
    y1: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    attn_concat: Mat,
    ln2: LnCache,
    y2: Mat,
    fc_pre: Mat,
    fc_act: Mat,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    yf: Mat,
    /// Softmax of logits at every position (T x V).
    probs: Mat,
}

fn layer_norm(x: &Mat, gamma: &Vect, beta: &Vect) -> (Mat, LnCache) {
    let t = x.nrows();
    let e = x.ncols();
    let mut xhat = Mat::zeros((t, e));
    let mut inv_std = Vect::zeros(t);
    for i in 0..t {
        let row = x.row(i);
        let mean = row.mean().unwrap();
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for j in 0..e {
            xhat[[i, j]] = (x[[i, j]] - mean) * is;
        }
    }
    let mut y = xhat.clone();
    for i in 0..t {
        for j in 0..e {
            y[[i, j]] = xhat[[i, j]] * gamma[j] + beta[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Mat,
    cache: &LnCache,
    gamma: &Vect,
    g_gamma: &mut Vect,
    g_beta: &mut Vect,
) -> Mat {
    let t = dy.nrows();
    let e = dy.ncols();
    let mut dx = Mat::zeros((t, e));
    for i in 0..t {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..e {
            let dxhat = dy[[i, j]] * gamma[j];
            m1 += dxhat;
            m2 += dxhat * cache.xhat[[i, j]];
            g_gamma[j] += dy[[i, j]] * cache.xhat[[i, j]];
            g_beta[j] += dy[[i, j]];
        }
        m1 /= e as f64;
        m2 /= e as f64;
        for j in 0..e {
            let dxhat = dy[[i, j]] * gamma[j];
            dx[[i, j]] = cache.inv_std[i] * (dxhat - m1 - cache.xhat[[i, j]] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn add_bias(m: &mut Mat, b: &Vect) {
    for mut row in m.rows_mut() {
        row += b;
    }
}

fn softmax_rows(m: &mut Mat) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

#[derive(Debug, Clone)]
pub struct TransformerModel {
    cfg: TransformerConfig,
    params: Params,
}

impl TransformerModel {
    /// A freshly initialized model (scaled-normal weights, unit LayerNorm
    /// gains, zero biases), deterministic in the seed.
    pub fn new(cfg: TransformerConfig, seed: u64) -> Result<TransformerModel, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = Params::init(&cfg, &mut rng);
        Ok(TransformerModel { cfg, params })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn forward(&self, ids: &[TokenId]) -> ForwardCache {
        let t = ids.len();
        let e = self.cfg.embed_dim;
        let heads = self.cfg.heads;
        let dh = e / heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = Mat::zeros((t, e));
        for (i, &id) in ids.iter().enumerate() {
            let row = &self.params.tok_emb.row(id as usize) + &self.params.pos_emb.row(i);
            x.row_mut(i).assign(&row);
        }

        let mut layers = Vec::with_capacity(self.cfg.layers);
        for layer in &self.params.layers {
            let x_in = x.clone();
            let (y1, ln1) = layer_norm(&x_in, &layer.ln1_g, &layer.ln1_b);
            let mut qkv = y1.dot(&layer.w_qkv);
            add_bias(&mut qkv, &layer.b_qkv);
            let q = qkv.slice(s![.., 0..e]).to_owned();
            let k = qkv.slice(s![.., e..2 * e]).to_owned();
            let v = qkv.slice(s![.., 2 * e..3 * e]).to_owned();

            let mut probs = Vec::with_capacity(heads);
            let mut attn_concat = Mat::zeros((t, e));
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qh = q.slice(cols);
                let kh = k.slice(cols);
                let vh = v.slice(cols);
                let mut scores = qh.dot(&kh.t()) * scale;
                for i in 0..t {
                    for j in (i + 1)..t {
                        scores[[i, j]] = f64::NEG_INFINITY;
                    }
                }
                softmax_rows(&mut scores);
                let ctx = scores.dot(&vh);
                attn_concat.slice_mut(cols).assign(&ctx);
                probs.push(scores);
            }
            let mut attn_out = attn_concat.dot(&layer.w_o);
            add_bias(&mut attn_out, &layer.b_o);
            let x_mid = &x_in + &attn_out;

            let (y2, ln2) = layer_norm(&x_mid, &layer.ln2_g, &layer.ln2_b);
            let mut fc_pre = y2.dot(&layer.w_fc);
            add_bias(&mut fc_pre, &layer.b_fc);
            let fc_act = fc_pre.mapv(gelu);
            let mut proj = fc_act.dot(&layer.w_proj);
            add_bias(&mut proj, &layer.b_proj);
            x = &x_mid + &proj;

            layers.push(LayerCache {
                ln1,
                y1,
                q,
                k,
                v,
                probs,
                attn_concat,
                ln2,
                y2,
                fc_pre,
                fc_act,
            });
        }

        let (yf, lnf) = layer_norm(&x, &self.params.lnf_g, &self.params.lnf_b);
        let mut logits = yf.dot(&self.params.w_head);
        add_bias(&mut logits, &self.params.b_head);
        softmax_rows(&mut logits);
        ForwardCache {
            layers,
            lnf,
            yf,
            probs: logits,
        }
    }

    /// Softmax distribution at every position of the context.
    pub fn distributions(&self, ids: &[TokenId]) -> Result<Vec<Vec<f64>>, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptyContext);
        }
        if ids.len() > self.cfg.window {
            return Err(ModelError::ContextTooLong {
                len: ids.len(),
                window: self.cfg.window,
            });
        }
        let cache = self.forward(ids);
        Ok(cache
            .probs
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect())
    }

    /// Sum of next-token cross-entropies and parameter gradients for one
    /// unpadded sequence. Targets are positions 1..len (pattern tokens
    /// included); gradients are of the unnormalized CE sum.
    fn sequence_grads(&self, seq: &[TokenId]) -> (f64, usize, Params) {
        let t = seq.len() - 1;
        let ids = &seq[..t];
        let cache = self.forward(ids);
        let e = self.cfg.embed_dim;
        let heads = self.cfg.heads;
        let dh = e / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut grads = Params::zeros(&self.cfg);

        let mut ce = 0.0;
        let mut dlogits = cache.probs.clone();
        for i in 0..t {
            let target = seq[i + 1] as usize;
            ce -= cache.probs[[i, target]].max(1e-300).ln();
            dlogits[[i, target]] -= 1.0;
        }

        // Head and final norm.
        grads.w_head = cache.yf.t().dot(&dlogits);
        grads.b_head = dlogits.sum_axis(Axis(0));
        let d_yf = dlogits.dot(&self.params.w_head.t());
        let mut dx = layer_norm_backward(
            &d_yf,
            &cache.lnf,
            &self.params.lnf_g,
            &mut grads.lnf_g,
            &mut grads.lnf_b,
        );

        for (li, layer) in self.params.layers.iter().enumerate().rev() {
            let lc = &cache.layers[li];
            let lg = &mut grads.layers[li];

            // Feed-forward branch.
            let d_proj = dx.clone();
            lg.w_proj = lc.fc_act.t().dot(&d_proj);
            lg.b_proj = d_proj.sum_axis(Axis(0));
            let mut d_fc = d_proj.dot(&layer.w_proj.t());
            for (df, &pre) in d_fc.iter_mut().zip(lc.fc_pre.iter()) {
                *df *= gelu_grad(pre);
            }
            lg.w_fc = lc.y2.t().dot(&d_fc);
            lg.b_fc = d_fc.sum_axis(Axis(0));
            let d_y2 = d_fc.dot(&layer.w_fc.t());
            let d_mid_ln =
                layer_norm_backward(&d_y2, &lc.ln2, &layer.ln2_g, &mut lg.ln2_g, &mut lg.ln2_b);
            let d_x_mid = &dx + &d_mid_ln;

            // Attention branch.
            let d_attn_out = d_x_mid.clone();
            lg.w_o = lc.attn_concat.t().dot(&d_attn_out);
            lg.b_o = d_attn_out.sum_axis(Axis(0));
            let d_concat = d_attn_out.dot(&layer.w_o.t());

            let rows = ids.len();
            let mut d_q = Mat::zeros((rows, e));
            let mut d_k = Mat::zeros((rows, e));
            let mut d_v = Mat::zeros((rows, e));
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let probs = &lc.probs[h];
                let d_ctx: ArrayView2<f64> = d_concat.slice(cols);
                let vh = lc.v.slice(cols);
                let d_probs = d_ctx.dot(&vh.t());
                d_v.slice_mut(cols).assign(&probs.t().dot(&d_ctx));
                // Softmax backward per row.
                let mut d_scores = Mat::zeros((rows, rows));
                for i in 0..rows {
                    let dot: f64 = (0..rows).map(|j| d_probs[[i, j]] * probs[[i, j]]).sum();
                    for j in 0..rows {
                        d_scores[[i, j]] = probs[[i, j]] * (d_probs[[i, j]] - dot);
                    }
                }
                let qh = lc.q.slice(cols);
                let kh = lc.k.slice(cols);
                d_q.slice_mut(cols).assign(&(d_scores.dot(&kh) * scale));
                d_k.slice_mut(cols).assign(&(d_scores.t().dot(&qh) * scale));
            }

            let mut d_qkv = Mat::zeros((rows, 3 * e));
            d_qkv.slice_mut(s![.., 0..e]).assign(&d_q);
            d_qkv.slice_mut(s![.., e..2 * e]).assign(&d_k);
            d_qkv.slice_mut(s![.., 2 * e..3 * e]).assign(&d_v);
            lg.w_qkv = lc.y1.t().dot(&d_qkv);
            lg.b_qkv = d_qkv.sum_axis(Axis(0));
            let d_y1 = d_qkv.dot(&layer.w_qkv.t());
            let d_x_ln =
                layer_norm_backward(&d_y1, &lc.ln1, &layer.ln1_g, &mut lg.ln1_g, &mut lg.ln1_b);
            dx = &d_x_mid + &d_x_ln;
        }

        for (i, &id) in ids.iter().enumerate() {
            let d_row = dx.row(i);
            let mut tok_row = grads.tok_emb.row_mut(id as usize);
            tok_row += &d_row;
            let mut pos_row = grads.pos_emb.row_mut(i);
            pos_row += &d_row;
        }

        (ce, t, grads)
    }

    /// Mean cross-entropy and averaged gradients over a batch of unpadded
    /// sequences.
    fn batch_grads(&self, batch: &[&[TokenId]]) -> (f64, Params) {
        let results: Vec<(f64, usize, Params)> = batch
            .par_iter()
            .map(|seq| self.sequence_grads(seq))
            .collect();
        let mut total_ce = 0.0;
        let mut total_targets = 0usize;
        let mut grads = Params::zeros(&self.cfg);
        // Sequential reduction in batch order keeps the sum bit-for-bit
        // reproducible regardless of the worker count.
        for (ce, n, g) in &results {
            total_ce += ce;
            total_targets += n;
            grads.accumulate(g);
        }
        grads.scale(1.0 / total_targets.max(1) as f64);
        (total_ce / total_targets.max(1) as f64, grads)
    }

    pub(super) fn write_body<W: Write>(&self, writer: &mut W) -> std::io::Result<()> {
        writer.write_u64::<LittleEndian>(self.params.len() as u64)?;
        for slice in self.params.flat() {
            for &x in slice {
                writer.write_f64::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub(super) fn read_body<R: Read>(
        cfg: TransformerConfig,
        reader: &mut R,
    ) -> Result<TransformerModel, ModelError> {
        cfg.validate()?;
        let mut params = Params::zeros(&cfg);
        let expected = params.len() as u64;
        let stored = reader.read_u64::<LittleEndian>()?;
        if stored != expected {
            return Err(ModelError::Checkpoint(format!(
                "parameter count mismatch: header implies {expected}, body says {stored}"
            )));
        }
        for slice in params.flat_mut() {
            for x in slice {
                *x = reader.read_f64::<LittleEndian>()?;
            }
        }
        Ok(TransformerModel { cfg, params })
    }
}

impl NextTokenModel for TransformerModel {
    fn window(&self) -> usize {
        self.cfg.window
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        let rows = self.distributions(context)?;
        Ok(rows.into_iter().last().unwrap())
    }
}

/// Train on already-encoded, unpadded sequences. Returns the model and the
/// per-epoch mean training loss.
pub fn train_transformer_on_sequences(
    sequences: &[Vec<TokenId>],
    cfg: TransformerConfig,
    train: &TrainConfig,
) -> Result<(TransformerModel, Vec<f64>), ModelError> {
    train.validate()?;
    if sequences.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    for seq in sequences {
        if seq.len() < 2 || seq.len() > cfg.window {
            return Err(ModelError::InvalidRequest(format!(
                "sequence length {} outside 2..={}",
                seq.len(),
                cfg.window
            )));
        }
    }

    let mut model = TransformerModel::new(cfg.clone(), train.seed)?;
    let mut optimizer = AdamW::new(&cfg, train);
    let mut rng = ChaCha20Rng::seed_from_u64(train.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut curve = Vec::with_capacity(train.epochs);

    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut epoch_ce = 0.0;
        let mut epoch_targets = 0usize;
        for (step, chunk) in order.chunks(train.batch_size).enumerate() {
            let batch: Vec<&[TokenId]> = chunk.iter().map(|&i| sequences[i].as_slice()).collect();
            let (mean_ce, grads) = model.batch_grads(&batch);
            if !mean_ce.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, step });
            }
            let n: usize = batch.iter().map(|s| s.len() - 1).sum();
            epoch_ce += mean_ce * n as f64;
            epoch_targets += n;
            optimizer.update(&mut model.params, &grads);
        }
        curve.push(epoch_ce / epoch_targets as f64);
    }
    Ok((model, curve))
}

/// Encode a corpus as pattern-prefixed rules and train on them.
pub fn train_transformer(
    corpus: &Corpus,
    cfg: TransformerConfig,
    train: &TrainConfig,
) -> Result<(TransformerModel, Vec<f64>), ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let sequences = encode_rules(corpus, cfg.window)?;
    train_transformer_on_sequences(&sequences, cfg, train)
}

/// Unpadded `<BOS> pattern <SEP> password <EOS>` sequences for a corpus.
pub fn encode_rules(corpus: &Corpus, window: usize) -> Result<Vec<Vec<TokenId>>, ModelError> {
    let vocab = Vocabulary::new();
    corpus
        .passwords()
        .iter()
        .map(|pw| {
            let pattern = Pattern::extract(pw).map_err(|e| {
                ModelError::InvalidRequest(format!("uncleaned password {pw:?}: {e}"))
            })?;
            let mut seq = vocab.encode_prompt(&pattern);
            for ch in pw.chars() {
                seq.push(Vocabulary::char_token_id(ch).unwrap());
            }
            seq.push(EOS);
            if seq.len() > window {
                return Err(ModelError::ContextTooLong {
                    len: seq.len(),
                    window,
                });
            }
            Ok(seq)
        })
        .collect()
}

/// Compare analytic gradients against central finite differences on a
/// sampled subset of parameters. Returns the max relative error, with the
/// difference measured against max(|analytic| + |numeric|, 1e-6) so that
/// near-zero gradients are judged on an absolute noise floor.
pub fn gradient_check(
    model: &TransformerModel,
    batch: &[Vec<TokenId>],
    samples: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    if samples == 0 {
        return Err(ModelError::InvalidRequest(
            "gradient check needs at least one sampled parameter".into(),
        ));
    }
    if batch.is_empty() {
        return Err(ModelError::InvalidRequest("empty batch".into()));
    }
    let refs: Vec<&[TokenId]> = batch.iter().map(|s| s.as_slice()).collect();
    let (_, grads) = model.batch_grads(&refs);

    let n_params = model.params.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let step = 1e-5;
    let mut max_rel = 0.0f64;
    let mut probe = model.clone();
    for _ in 0..samples {
        let idx = rng.gen_range(0..n_params);
        let original = probe.params.get(idx);

        probe.params.add_at(idx, step);
        let (loss_plus, _) = probe.batch_grads(&refs);
        probe.params.add_at(idx, -2.0 * step);
        let (loss_minus, _) = probe.batch_grads(&refs);
        probe.params.add_at(idx, step);
        debug_assert!((probe.params.get(idx) - original).abs() < 1e-12);

        let numeric = (loss_plus - loss_minus) / (2.0 * step);
        let analytic = grads.get(idx);
        let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
