//! Decoder-only autoregressive policy over the recommendation vocabulary.
//!
//! Pre-norm transformer: learned token and position embeddings, `layers`
//! blocks of causal multi-head attention and a gelu feed-forward, a final
//! layer norm, and an untied output projection. Everything is f64 and small
//! enough to train on one core.
//!
//! The forward pass exists twice: an eager path used for sampling and
//! evaluation (with a per-layer key/value cache so generation is linear in
//! produced tokens), and a taped path used for training. A unit test pins
//! the two together to 1e-12.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use reclab_tensor::{checkpoint, ops, Tape, Tensor, Value};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::{self, salt};

/// Additive mask value for future positions. Large enough that the masked
/// score underflows to exactly zero after the softmax's max-subtracted exp,
/// making causality exact rather than approximate.
const MASK_NEG: f64 = -1e30;

/// Standard deviation for weight initialization.
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width.
    pub dim: usize,
    /// Transformer block count.
    pub layers: usize,
    /// Attention heads per block; must divide `dim`.
    pub heads: usize,
    /// Maximum sequence length (prompt plus generation).
    pub max_len: usize,
    /// Generation budget per rollout.
    pub max_new: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            layers: 2,
            heads: 2,
            max_len: 512,
            max_new: 160,
        }
    }
}

impl ModelConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.dim == 0 {
            v.push("model.dim must be positive".into());
        }
        if self.layers == 0 {
            v.push("model.layers must be positive".into());
        }
        if self.heads == 0 || (self.dim > 0 && self.dim % self.heads != 0) {
            v.push(format!(
                "model.heads must be positive and divide dim ({} heads, dim {})",
                self.heads, self.dim
            ));
        }
        if self.max_len < 2 {
            v.push("model.max_len must be at least 2".into());
        }
        if self.max_new == 0 {
            v.push("model.max_new must be positive".into());
        }
        v
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1_g: Tensor,
    ln1_b: Tensor,
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    ln2_g: Tensor,
    ln2_b: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

/// Field order used everywhere parameters are enumerated; keeping it in one
/// place makes checkpoints, optimizer state, and traced values line up.
const BLOCK_FIELDS: [&str; 16] = [
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_g", "ln2_b", "w1",
    "b1", "w2", "b2",
];

impl Block {
    fn fields(&self) -> [&Tensor; 16] {
        [
            &self.ln1_g, &self.ln1_b, &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv,
            &self.wo, &self.bo, &self.ln2_g, &self.ln2_b, &self.w1, &self.b1, &self.w2, &self.b2,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct PolicyModel {
    cfg: ModelConfig,
    vocab_size: usize,
    tok_emb: Tensor,
    pos_emb: Tensor,
    blocks: Vec<Block>,
    lnf_g: Tensor,
    lnf_b: Tensor,
    w_out: Tensor,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let dist = Normal::new(0.0, INIT_STD).expect("valid normal");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    let mut t = Tensor::from_vec(shape, data).expect("shape/data agree");
    t.requires_grad = true;
    t
}

fn zeros_grad(shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.requires_grad = true;
    t
}

fn ones_grad(shape: &[usize]) -> Tensor {
    let mut t = Tensor::from_vec(shape, vec![1.0; shape.iter().product()]).unwrap();
    t.requires_grad = true;
    t
}

impl PolicyModel {
    /// Fresh model: weights from N(0, 0.02²) on the stream named by `seed`,
    /// biases zero, layer-norm gains one.
    pub fn new(cfg: ModelConfig, vocab_size: usize, seed: u64) -> Result<PolicyModel, Error> {
        let violations = cfg.violations();
        if !violations.is_empty() {
            return Err(Error::InvalidConfig { violations });
        }
        if vocab_size == 0 {
            return Err(Error::InvalidConfig {
                violations: vec!["vocab size must be positive".into()],
            });
        }
        let mut rng = rng::stream(seed, &[salt::INIT]);
        let d = cfg.dim;
        let blocks = (0..cfg.layers)
            .map(|_| Block {
                ln1_g: ones_grad(&[d]),
                ln1_b: zeros_grad(&[d]),
                wq: normal_tensor(&mut rng, &[d, d]),
                bq: zeros_grad(&[d]),
                wk: normal_tensor(&mut rng, &[d, d]),
                bk: zeros_grad(&[d]),
                wv: normal_tensor(&mut rng, &[d, d]),
                bv: zeros_grad(&[d]),
                wo: normal_tensor(&mut rng, &[d, d]),
                bo: zeros_grad(&[d]),
                ln2_g: ones_grad(&[d]),
                ln2_b: zeros_grad(&[d]),
                w1: normal_tensor(&mut rng, &[d, 4 * d]),
                b1: zeros_grad(&[4 * d]),
                w2: normal_tensor(&mut rng, &[4 * d, d]),
                b2: zeros_grad(&[d]),
            })
            .collect();
        Ok(PolicyModel {
            cfg,
            vocab_size,
            tok_emb: normal_tensor(&mut rng, &[vocab_size, d]),
            pos_emb: normal_tensor(&mut rng, &[cfg.max_len, d]),
            blocks,
            lnf_g: ones_grad(&[d]),
            lnf_b: zeros_grad(&[d]),
            w_out: normal_tensor(&mut rng, &[d, vocab_size]),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Parameters in the fixed enumeration order, with stable names.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_FIELDS.iter().zip(b.fields()) {
                out.push((format!("block{i}.{name}"), t));
            }
        }
        out.push(("lnf_g".into(), &self.lnf_g));
        out.push(("lnf_b".into(), &self.lnf_b));
        out.push(("w_out".into(), &self.w_out));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend(b.fields_mut());
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out.push(&mut self.w_out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<(), Error> {
        if tokens.is_empty() {
            return Err(Error::ContextOverflow {
                len: 0,
                max: self.cfg.max_len,
            });
        }
        if tokens.len() > self.cfg.max_len {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                max: self.cfg.max_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size) {
            return Err(Error::MalformedVocab(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn causal_mask(t: usize) -> Tensor {
        let mut data = vec![0.0; t * t];
        for i in 0..t {
            for j in i + 1..t {
                data[i * t + j] = MASK_NEG;
            }
        }
        Tensor::from_vec(&[t, t], data).expect("mask shape")
    }

    /// Eager forward pass: hidden states after the final layer norm, `[T, d]`.
    fn forward_hidden(&self, tokens: &[usize]) -> Result<Tensor, Error> {
        self.check_tokens(tokens)?;
        let t = tokens.len();
        let positions: Vec<usize> = (0..t).collect();
        let mut x = ops::add(
            &ops::gather_rows(&self.tok_emb, tokens)?,
            &ops::gather_rows(&self.pos_emb, &positions)?,
        )?;
        let mask = Self::causal_mask(t);
        for b in &self.blocks {
            let h = ops::layer_norm(&x, &b.ln1_g, &b.ln1_b)?;
            let attn = self.attention_eager(&h, b, &mask)?;
            x = ops::add(&x, &attn)?;
            let h = ops::layer_norm(&x, &b.ln2_g, &b.ln2_b)?;
            let ff = self.feed_forward_eager(&h, b)?;
            x = ops::add(&x, &ff)?;
        }
        Ok(ops::layer_norm(&x, &self.lnf_g, &self.lnf_b)?)
    }

    fn attention_eager(&self, h: &Tensor, b: &Block, mask: &Tensor) -> Result<Tensor, Error> {
        let dh = self.cfg.dim / self.cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = ops::add_row(&ops::matmul(h, &b.wq)?, &b.bq)?;
        let k = ops::add_row(&ops::matmul(h, &b.wk)?, &b.bk)?;
        let v = ops::add_row(&ops::matmul(h, &b.wv)?, &b.bv)?;
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for hd in 0..self.cfg.heads {
            let lo = hd * dh;
            let qh = ops::slice_cols(&q, lo, dh)?;
            let kh = ops::slice_cols(&k, lo, dh)?;
            let vh = ops::slice_cols(&v, lo, dh)?;
            let scores = ops::add(
                &ops::scale(&ops::matmul(&qh, &ops::transpose(&kh)?)?, scale)?,
                mask,
            )?;
            let probs = ops::softmax(&scores)?;
            heads.push(ops::matmul(&probs, &vh)?);
        }
        let refs: Vec<&Tensor> = heads.iter().collect();
        let ctx = ops::concat_cols(&refs)?;
        Ok(ops::add_row(&ops::matmul(&ctx, &b.wo)?, &b.bo)?)
    }

    fn feed_forward_eager(&self, h: &Tensor, b: &Block) -> Result<Tensor, Error> {
        let inner = ops::gelu(&ops::add_row(&ops::matmul(h, &b.w1)?, &b.b1)?)?;
        Ok(ops::add_row(&ops::matmul(&inner, &b.w2)?, &b.b2)?)
    }

    /// Eager logits `[T, V]` for teacher-forced inputs.
    pub fn forward_logits(&self, tokens: &[usize]) -> Result<Tensor, Error> {
        Ok(ops::matmul(&self.forward_hidden(tokens)?, &self.w_out)?)
    }

    /// Raw (temperature-1, unfiltered) log-probabilities of each response
    /// token given the prompt and the preceding response tokens.
    pub fn response_logprobs(&self, prompt: &[usize], response: &[usize]) -> Result<Vec<f64>, Error> {
        if response.is_empty() {
            return Ok(Vec::new());
        }
        let mut tokens: Vec<usize> = Vec::with_capacity(prompt.len() + response.len());
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(response);
        // The last response token is never an input.
        let inputs = &tokens[..tokens.len() - 1];
        let logits = self.forward_logits(inputs)?;
        let logsm = ops::log_softmax(&logits)?;
        let p = prompt.len();
        let mut out = Vec::with_capacity(response.len());
        for (j, &tok) in response.iter().enumerate() {
            let row = p - 1 + j;
            out.push(logsm.data()[row * self.vocab_size + tok]);
        }
        Ok(out)
    }

    /// Full log-softmax rows `[r, V]` over the response positions, eager.
    /// Row `j` is the distribution that generated `response[j]`.
    pub fn response_distributions(
        &self,
        prompt: &[usize],
        response: &[usize],
    ) -> Result<Tensor, Error> {
        let mut tokens: Vec<usize> = Vec::with_capacity(prompt.len() + response.len());
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(response);
        let inputs = &tokens[..tokens.len() - 1];
        let logits = self.forward_logits(inputs)?;
        let rows = ops::slice_rows(&logits, prompt.len() - 1, response.len())?;
        Ok(ops::log_softmax(&rows)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), Error> {
        let meta = Tensor::from_vec(
            &[6],
            vec![
                self.cfg.dim as f64,
                self.cfg.layers as f64,
                self.cfg.heads as f64,
                self.cfg.max_len as f64,
                self.cfg.max_new as f64,
                self.vocab_size as f64,
            ],
        )
        .expect("meta shape");
        let mut entries: Vec<(String, &Tensor)> = vec![("__config__".into(), &meta)];
        let named = self.named_parameters();
        entries.extend(named.iter().map(|(n, t)| (n.clone(), *t)));
        checkpoint::save(path, &entries)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<PolicyModel, Error> {
        let entries = checkpoint::load(path)?;
        let meta = entries
            .iter()
            .find(|(n, _)| n == "__config__")
            .ok_or_else(|| Error::MalformedVocab("checkpoint missing model config".into()))?;
        let m = meta.1.data();
        if m.len() != 6 {
            return Err(Error::MalformedVocab("bad model config entry".into()));
        }
        let cfg = ModelConfig {
            dim: m[0] as usize,
            layers: m[1] as usize,
            heads: m[2] as usize,
            max_len: m[3] as usize,
            max_new: m[4] as usize,
        };
        let vocab_size = m[5] as usize;
        let mut model = PolicyModel::new(cfg, vocab_size, 0)?;
        {
            let expected = model.named_parameters();
            let mut wanted: std::collections::HashMap<String, Vec<usize>> = expected
                .iter()
                .map(|(n, t)| (n.clone(), t.shape().to_vec()))
                .collect();
            for (name, tensor) in &entries {
                if name == "__config__" {
                    continue;
                }
                match wanted.remove(name) {
                    Some(shape) if shape == tensor.shape() => {}
                    Some(shape) => {
                        return Err(Error::MalformedVocab(format!(
                            "checkpoint tensor {name} has shape {:?}, expected {shape:?}",
                            tensor.shape()
                        )))
                    }
                    None => {
                        return Err(Error::MalformedVocab(format!(
                            "unexpected checkpoint tensor {name}"
                        )))
                    }
                }
            }
            if let Some(missing) = wanted.keys().next() {
                return Err(Error::MalformedVocab(format!(
                    "checkpoint missing tensor {missing}"
                )));
            }
        }
        let by_name: std::collections::HashMap<String, Tensor> = entries
            .into_iter()
            .filter(|(n, _)| n != "__config__")
            .collect();
        for (param, (name, _)) in model
            .parameters_mut()
            .into_iter()
            .zip(by_name_order(&by_name))
        {
            let mut loaded = by_name[&name].clone();
            loaded.requires_grad = true;
            *param = loaded;
        }
        Ok(model)
    }
}

/// Names in enumeration order (helper for load; keeps zip alignment obvious).
fn by_name_order(by_name: &std::collections::HashMap<String, Tensor>) -> Vec<(String, ())> {
    // Reconstruct enumeration order from the name scheme itself.
    let mut names: Vec<String> = vec!["tok_emb".into(), "pos_emb".into()];
    let mut block = 0;
    loop {
        let probe = format!("block{block}.ln1_g");
        if !by_name.contains_key(&probe) {
            break;
        }
        for f in BLOCK_FIELDS {
            names.push(format!("block{block}.{f}"));
        }
        block += 1;
    }
    names.push("lnf_g".into());
    names.push("lnf_b".into());
    names.push("w_out".into());
    names.into_iter().map(|n| (n, ())).collect()
}

// ---------------------------------------------------------------------------
// Traced forward (training path)
// ---------------------------------------------------------------------------

/// The model's parameters registered on a tape, ready to build differentiable
/// forward passes. Several sequences can share one traced model so their
/// losses are differentiated together.
pub struct TracedModel {
    cfg: ModelConfig,
    tok_emb: Value,
    pos_emb: Value,
    blocks: Vec<[Value; 16]>,
    lnf_g: Value,
    lnf_b: Value,
    w_out: Value,
}

impl PolicyModel {
    /// Register every parameter on the tape. The returned values follow the
    /// same order as [`PolicyModel::named_parameters`].
    pub fn trace(&self, tape: &mut Tape) -> TracedModel {
        let tok_emb = tape.input(&self.tok_emb);
        let pos_emb = tape.input(&self.pos_emb);
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let f = b.fields();
                std::array::from_fn(|i| tape.input(f[i]))
            })
            .collect();
        TracedModel {
            cfg: self.cfg,

            tok_emb,
            pos_emb,
            blocks,
            lnf_g: tape.input(&self.lnf_g),
            lnf_b: tape.input(&self.lnf_b),
            w_out: tape.input(&self.w_out),
        }
    }
}

impl TracedModel {
    /// Traced parameter handles, in enumeration order.
    pub fn param_values(&self) -> Vec<Value> {
        let mut out = vec![self.tok_emb, self.pos_emb];
        for b in &self.blocks {
            out.extend_from_slice(b);
        }
        out.push(self.lnf_g);
        out.push(self.lnf_b);
        out.push(self.w_out);
        out
    }

    /// Traced logits `[T, V]` for teacher-forced inputs.
    pub fn logits(&self, tape: &mut Tape, tokens: &[usize]) -> Result<Value, Error> {
        if tokens.is_empty() || tokens.len() > self.cfg.max_len {
            return Err(Error::ContextOverflow {
                len: tokens.len(),
                max: self.cfg.max_len,
            });
        }
        let t = tokens.len();
        let positions: Vec<usize> = (0..t).collect();
        let tok = tape.gather_rows(self.tok_emb, tokens)?;
        let pos = tape.gather_rows(self.pos_emb, &positions)?;
        let mut x = tape.add(tok, pos)?;
        let mask = tape.constant(&PolicyModel::causal_mask(t));
        let dh = self.cfg.dim / self.cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for b in &self.blocks {
            let [ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2] = *b;
            let h = tape.layer_norm(x, ln1_g, ln1_b)?;
            let q = tape.matmul(h, wq)?;
            let q = tape.add_row(q, bq)?;
            let k = tape.matmul(h, wk)?;
            let k = tape.add_row(k, bk)?;
            let v = tape.matmul(h, wv)?;
            let v = tape.add_row(v, bv)?;
            let mut head_outs = Vec::with_capacity(self.cfg.heads);
            for hd in 0..self.cfg.heads {
                let lo = hd * dh;
                let qh = tape.slice_cols(q, lo, dh)?;
                let kh = tape.slice_cols(k, lo, dh)?;
                let vh = tape.slice_cols(v, lo, dh)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale)?;
                let scores = tape.add(scores, mask)?;
                let probs = tape.softmax(scores)?;
                head_outs.push(tape.matmul(probs, vh)?);
            }
            let ctx = tape.concat_cols(&head_outs)?;
            let attn = tape.matmul(ctx, wo)?;
            let attn = tape.add_row(attn, bo)?;
            x = tape.add(x, attn)?;
            let h = tape.layer_norm(x, ln2_g, ln2_b)?;
            let inner = tape.matmul(h, w1)?;
            let inner = tape.add_row(inner, b1)?;
            let inner = tape.gelu(inner)?;
            let ff = tape.matmul(inner, w2)?;
            let ff = tape.add_row(ff, b2)?;
            x = tape.add(x, ff)?;
        }
        let hidden = tape.layer_norm(x, self.lnf_g, self.lnf_b)?;
        Ok(tape.matmul(hidden, self.w_out)?)
    }

    /// Traced log-softmax rows over the response positions, `[r, V]`.
    pub fn response_distributions(
        &self,
        tape: &mut Tape,
        prompt: &[usize],
        response: &[usize],
    ) -> Result<Value, Error> {
        if prompt.is_empty() || response.is_empty() {
            return Err(Error::ContextOverflow {
                len: 0,
                max: self.cfg.max_len,
            });
        }
        let mut tokens: Vec<usize> = Vec::with_capacity(prompt.len() + response.len());
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(response);
        let inputs = tokens[..tokens.len() - 1].to_vec();
        let logits = self.logits(tape, &inputs)?;
        let rows = tape.slice_rows(logits, prompt.len() - 1, response.len())?;
        Ok(tape.log_softmax(rows)?)
    }

    /// Traced per-token log-probabilities `[r]` of the given response.
    pub fn response_logprobs(
        &self,
        tape: &mut Tape,
        prompt: &[usize],
        response: &[usize],
    ) -> Result<(Value, Value), Error> {
        let rows = self.response_distributions(tape, prompt, response)?;
        let picked = tape.select_cols(rows, response)?;
        Ok((picked, rows))
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Why generation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinishReason {
    /// The end-of-sequence token was produced (and is included).
    Eos,
    /// The generation budget or context window was exhausted.
    Budget,
}

/// One sampled response with the log-probabilities recorded at sampling
/// time. Log-probabilities are raw model values (temperature 1, no nucleus
/// filtering), so an importance ratio computed against the same weights is
/// exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub response: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub finish: FinishReason,
}

/// Temperature-scaled nucleus distribution over one logit row: softmax at
/// `temperature`, keep the smallest prefix of probability mass `>= top_p`,
/// renormalize. Returned pairs are sorted by descending probability (ties by
/// ascending token id).
pub fn sampling_distribution(logits: &[f64], temperature: f64, top_p: f64) -> Vec<(usize, f64)> {
    assert!(temperature > 0.0 && top_p > 0.0 && top_p <= 1.0);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(usize, f64)> = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| (i, ((z - max) / temperature).exp()))
        .collect();
    let sum: f64 = probs.iter().map(|(_, p)| p).sum();
    for (_, p) in &mut probs {
        *p /= sum;
    }
    probs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut cum = 0.0;
    let mut keep = probs.len();
    for (i, (_, p)) in probs.iter().enumerate() {
        cum += p;
        if cum >= top_p - 1e-12 {
            keep = i + 1;
            break;
        }
    }
    probs.truncate(keep);
    let kept: f64 = probs.iter().map(|(_, p)| p).sum();
    for (_, p) in &mut probs {
        *p /= kept;
    }
    probs
}

/// Per-layer key/value cache for incremental decoding.
#[derive(Clone)]
struct KvCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    len: usize,
}

impl PolicyModel {
    /// Append one token to the cache and return the raw logits row for the
    /// next-token distribution. `position` is the token's index in the full
    /// sequence.
    fn step_with_cache(&self, cache: &mut KvCache, token: usize, position: usize) -> Vec<f64> {
        let d = self.cfg.dim;
        let dh = d / self.cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x: Vec<f64> = (0..d)
            .map(|j| self.tok_emb.data()[token * d + j] + self.pos_emb.data()[position * d + j])
            .collect();
        let t_new = cache.len + 1;
        for (li, b) in self.blocks.iter().enumerate() {
            let h = ln_row(&x, b.ln1_g.data(), b.ln1_b.data());
            let q = affine_row(&h, &b.wq, &b.bq);
            let k = affine_row(&h, &b.wk, &b.bk);
            let v = affine_row(&h, &b.wv, &b.bv);
            cache.k[li].extend_from_slice(&k);
            cache.v[li].extend_from_slice(&v);
            let keys = &cache.k[li];
            let vals = &cache.v[li];
            let mut ctx = vec![0.0; d];
            for hd in 0..self.cfg.heads {
                let lo = hd * dh;
                // Scores against every cached position (causal by construction).
                let mut scores: Vec<f64> = (0..t_new)
                    .map(|p| {
                        let mut s = 0.0;
                        for j in 0..dh {
                            s += q[lo + j] * keys[p * d + lo + j];
                        }
                        s * scale
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in &mut scores {
                    *s = (*s - m).exp();
                    sum += *s;
                }
                for p in 0..t_new {
                    let w = scores[p] / sum;
                    for j in 0..dh {
                        ctx[lo + j] += w * vals[p * d + lo + j];
                    }
                }
            }
            let attn = affine_row(&ctx, &b.wo, &b.bo);
            for j in 0..d {
                x[j] += attn[j];
            }
            let h = ln_row(&x, b.ln2_g.data(), b.ln2_b.data());
            let mut inner = affine_row(&h, &b.w1, &b.b1);
            for z in &mut inner {
                *z = gelu_scalar(*z);
            }
            let ff = affine_row(&inner, &b.w2, &b.b2);
            for j in 0..d {
                x[j] += ff[j];
            }
        }
        cache.len = t_new;
        let h = ln_row(&x, self.lnf_g.data(), self.lnf_b.data());
        let v_size = self.vocab_size;
        let w = self.w_out.data();
        let mut logits = vec![0.0; v_size];
        for (j, &hj) in h.iter().enumerate() {
            if hj == 0.0 {
                continue;
            }
            let row = &w[j * v_size..(j + 1) * v_size];
            for (o, &wv) in logits.iter_mut().zip(row) {
                *o += hj * wv;
            }
        }
        logits
    }

    /// Sample one response. Generation stops at `eos` (which is kept in the
    /// response) or when the budget or context window runs out. The recorded
    /// log-probabilities are raw temperature-1 values.
    pub fn sample(
        &self,
        prompt: &[usize],
        eos: usize,
        temperature: f64,
        top_p: f64,
        max_new: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Rollout, Error> {
        self.check_tokens(prompt)?;
        if prompt.len() >= self.cfg.max_len {
            return Err(Error::ContextOverflow {
                len: prompt.len() + 1,
                max: self.cfg.max_len,
            });
        }
        let mut cache = KvCache {
            k: vec![Vec::with_capacity((prompt.len() + max_new) * self.cfg.dim); self.cfg.layers],
            v: vec![Vec::with_capacity((prompt.len() + max_new) * self.cfg.dim); self.cfg.layers],
            len: 0,
        };
        let mut logits = Vec::new();
        for (pos, &tok) in prompt.iter().enumerate() {
            logits = self.step_with_cache(&mut cache, tok, pos);
        }
        let mut response = Vec::new();
        let mut logprobs = Vec::new();
        let mut finish = FinishReason::Budget;
        for step in 0..max_new {
            let dist = sampling_distribution(&logits, temperature, top_p);
            let draw: f64 = rng.random();
            let mut cum = 0.0;
            let mut chosen = dist[dist.len() - 1].0;
            for &(tok, p) in &dist {
                cum += p;
                if draw < cum {
                    chosen = tok;
                    break;
                }
            }
            // Raw log-probability of the chosen token under the unfiltered
            // temperature-1 distribution.
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
            logprobs.push(logits[chosen] - lse);
            response.push(chosen);
            if chosen == eos {
                finish = FinishReason::Eos;
                break;
            }
            let position = prompt.len() + step;
            if position + 1 >= self.cfg.max_len {
                break;
            }
            logits = self.step_with_cache(&mut cache, chosen, position);
        }
        Ok(Rollout {
            response,
            logprobs,
            finish,
        })
    }

    /// Sample a group of `g` responses for one prompt. Each rollout draws
    /// from its own stream addressed by `(seed, tags..., rollout_index)`, so
    /// results do not depend on scheduling or on the other rollouts.
    pub fn sample_group(
        &self,
        prompt: &[usize],
        eos: usize,
        g: usize,
        temperature: f64,
        top_p: f64,
        max_new: usize,
        seed: u64,
        tags: &[u64],
    ) -> Result<Vec<Rollout>, Error> {
        (0..g)
            .into_par_iter()
            .map(|i| {
                let mut stream_tags = vec![salt::ROLLOUT];
                stream_tags.extend_from_slice(tags);
                stream_tags.push(i as u64);
                let mut rng = rng::stream(seed, &stream_tags);
                self.sample(prompt, eos, temperature, top_p, max_new, &mut rng)
            })
            .collect()
    }

    /// Per-token log-probabilities of many continuations of one shared
    /// prompt. The prompt is run through the cache once; each continuation
    /// then costs only its own incremental steps, which is what makes
    /// scoring a long candidate list affordable. Matches
    /// [`response_logprobs`](Self::response_logprobs) exactly.
    pub fn score_continuations(
        &self,
        prompt: &[usize],
        continuations: &[Vec<usize>],
    ) -> Result<Vec<Vec<f64>>, Error> {
        self.check_tokens(prompt)?;
        let longest = continuations.iter().map(Vec::len).max().unwrap_or(0);
        if prompt.len() + longest.max(1) - 1 > self.cfg.max_len {
            return Err(Error::ContextOverflow {
                len: prompt.len() + longest,
                max: self.cfg.max_len,
            });
        }
        let mut cache = KvCache {
            k: vec![Vec::with_capacity((prompt.len() + longest) * self.cfg.dim); self.cfg.layers],
            v: vec![Vec::with_capacity((prompt.len() + longest) * self.cfg.dim); self.cfg.layers],
            len: 0,
        };
        let mut prompt_logits = Vec::new();
        for (pos, &tok) in prompt.iter().enumerate() {
            prompt_logits = self.step_with_cache(&mut cache, tok, pos);
        }
        let log_softmax_at = |logits: &[f64], tok: usize| -> f64 {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
            logits[tok] - lse
        };
        let mut out = Vec::with_capacity(continuations.len());
        for cont in continuations {
            self.check_tokens(cont)?;
            let mut logprobs = Vec::with_capacity(cont.len());
            let mut branch = cache.clone();
            let mut logits = prompt_logits.clone();
            for (j, &tok) in cont.iter().enumerate() {
                logprobs.push(log_softmax_at(&logits, tok));
                if j + 1 < cont.len() {
                    logits = self.step_with_cache(&mut branch, tok, prompt.len() + j);
                }
            }
            out.push(logprobs);
        }
        Ok(out)
    }
}

fn ln_row(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + reclab_tensor::LAYER_NORM_EPS).sqrt();
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&v, (&g, &b))| (v - mean) * rstd * g + b)
        .collect()
}

fn affine_row(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    debug_assert_eq!(rows, x.len());
    let wd = w.data();
    let mut out = b.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &wd[i * cols..(i + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    out
}

fn gelu_scalar(x: f64) -> f64 {
    const COEF: f64 = 0.044715;
    let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + COEF * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}
