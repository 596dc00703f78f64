//! Tiny causal decoder: one single-head attention block and one tanh
//! feed-forward block, both residual, over learned token and position
//! embeddings.
//!
//! Input layout for a question with `max_ops` operation slots and
//! `n_thoughts` thought slots:
//!
//! ```text
//! BOS start op_1 .. op_k PAD .. PAD THINK x n | r_1 .. r_k A(answer) EOS
//! ```
//!
//! Everything left of `|` is the prefix. The thought slots can be replaced
//! by arbitrary embedding rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::Context;
use crate::error::{Error, Result};
use crate::params::{ParamSet, ParamVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

use super::task::{TaskInstance, Vocab};

/// Longest continuation a decode may produce.
pub const MAX_DECODE_TOKENS: usize = 64;

const MASKED: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseConfig {
    pub modulus: u32,
    pub d_model: usize,
    pub ff_hidden: usize,
    pub max_ops: usize,
    pub n_thoughts: usize,
}

impl BaseConfig {
    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.modulus)
    }

    pub fn prefix_len(&self) -> usize {
        2 + self.max_ops + self.n_thoughts
    }

    /// First thought slot.
    pub fn slot_start(&self) -> usize {
        2 + self.max_ops
    }

    pub fn max_len(&self) -> usize {
        self.prefix_len() + MAX_DECODE_TOKENS
    }

    /// Parameter names and shapes in lexicographic order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, h, v) = (self.d_model, self.ff_hidden, self.vocab().size());
        let mut out: Vec<(String, Vec<usize>)> = vec![
            (TOK_EMB.into(), vec![v, d]),
            (POS_EMB.into(), vec![self.max_len(), d]),
            (ATTN_Q.into(), vec![d, d]),
            (ATTN_K.into(), vec![d, d]),
            (ATTN_V.into(), vec![d, d]),
            (ATTN_O.into(), vec![d, d]),
            (FF_W1.into(), vec![d, h]),
            (FF_B1.into(), vec![h]),
            (FF_W2.into(), vec![h, d]),
            (FF_B2.into(), vec![d]),
            (OUT_W.into(), vec![d, v]),
            (OUT_B.into(), vec![v]),
        ];
        out.sort();
        out
    }
}

/// Token ids of the prefix with placeholder thought slots.
pub fn prefix_tokens(cfg: &BaseConfig, question_tokens: &[usize]) -> Result<Vec<usize>> {
    let vocab = cfg.vocab();
    let n_ops = question_tokens.len().saturating_sub(1);
    if question_tokens.is_empty() || n_ops > cfg.max_ops {
        return Err(Error::invalid(format!(
            "question with {n_ops} operations does not fit {} slots",
            cfg.max_ops
        )));
    }
    let mut ids = Vec::with_capacity(cfg.prefix_len());
    ids.push(vocab.bos());
    ids.extend_from_slice(question_tokens);
    ids.resize(2 + cfg.max_ops, vocab.pad());
    ids.resize(cfg.prefix_len(), vocab.think());
    Ok(ids)
}

/// Teacher-forcing continuation: reasoning digits, answer token, EOS.
pub fn target_tokens(cfg: &BaseConfig, inst: &TaskInstance) -> Vec<usize> {
    let vocab = cfg.vocab();
    let mut out: Vec<usize> = inst.reasoning_tokens.iter().map(|&r| vocab.digit(r)).collect();
    out.push(vocab.answer(inst.answer_token));
    out.push(vocab.eos());
    out
}

const TOK_EMB: &str = "base.tok_emb";
const POS_EMB: &str = "base.pos_emb";
const ATTN_Q: &str = "base.attn.q";
const ATTN_K: &str = "base.attn.k";
const ATTN_V: &str = "base.attn.v";
const ATTN_O: &str = "base.attn.o";
const FF_W1: &str = "base.ff.w1";
const FF_B1: &str = "base.ff.b1";
const FF_W2: &str = "base.ff.w2";
const FF_B2: &str = "base.ff.b2";
const OUT_W: &str = "base.out.weight";
const OUT_B: &str = "base.out.bias";

#[derive(Clone, Debug, PartialEq)]
pub struct ToyBaseModel {
    config: BaseConfig,
    params: ParamSet,
}

impl ToyBaseModel {
    pub fn new<R: Rng + ?Sized>(config: BaseConfig, rng: &mut R) -> Result<Self> {
        if config.d_model == 0 || config.ff_hidden == 0 || config.n_thoughts == 0 {
            return Err(Error::invalid("base dimensions must be positive"));
        }
        let d = config.d_model;
        let v = config.vocab().size();
        let s = 1.0 / (d as f64).sqrt();
        let mut p = ParamSet::new();
        p.insert(TOK_EMB, Tensor::randn(&[v, d], 1.0, rng));
        p.insert(POS_EMB, Tensor::randn(&[config.max_len(), d], 1.0, rng));
        for name in [ATTN_Q, ATTN_K, ATTN_V, ATTN_O] {
            p.insert(name, Tensor::randn(&[d, d], s, rng));
        }
        p.insert(FF_W1, Tensor::randn(&[d, config.ff_hidden], s, rng));
        p.insert(FF_B1, Tensor::zeros(&[config.ff_hidden]));
        p.insert(
            FF_W2,
            Tensor::randn(&[config.ff_hidden, d], 1.0 / (config.ff_hidden as f64).sqrt(), rng),
        );
        p.insert(FF_B2, Tensor::zeros(&[d]));
        p.insert(OUT_W, Tensor::randn(&[d, v], s, rng));
        p.insert(OUT_B, Tensor::zeros(&[v]));
        Ok(ToyBaseModel { config, params: p })
    }

    pub fn from_params(config: BaseConfig, params: ParamSet) -> Result<Self> {
        let actual: Vec<(String, Vec<usize>)> = params
            .iter()
            .map(|(k, e)| (k.clone(), e.value.shape().to_vec()))
            .collect();
        let expected = config.layout();
        if actual != expected {
            return Err(Error::invalid(format!(
                "base parameter layout mismatch: expected {expected:?}, got {actual:?}"
            )));
        }
        Ok(ToyBaseModel { config, params })
    }

    pub fn config(&self) -> &BaseConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn freeze(&mut self) {
        self.params.freeze_all();
    }

    pub fn vocab(&self) -> Vocab {
        self.config.vocab()
    }

    /// Embedding rows of the thought placeholder, repeated per slot.
    pub fn think_block(&self) -> Result<Tensor> {
        let table = self.params.get(TOK_EMB)?;
        table.gather_rows(&vec![self.vocab().think(); self.config.n_thoughts])
    }

    /// Energy context pooled from the question's token embeddings.
    pub fn question_context(&self, question_tokens: &[usize]) -> Result<Context> {
        Context::from_question_embeddings(self.params.get(TOK_EMB)?.gather_rows(question_tokens)?)
    }

    /// Input embedding matrix (before position embeddings) with the thought
    /// slots optionally replaced by `latents`.
    pub fn embed_input(&self, tokens: &[usize], latents: Option<&Tensor>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false)?;
        let l = latents.map(|t| tape.constant(t.clone())).transpose()?;
        let x = self.embed(&mut tape, &vars, tokens, l)?;
        Ok(tape.value(x).clone())
    }

    fn embed(&self, tape: &mut Tape, vars: &ParamVars, tokens: &[usize], latents: Option<Var>) -> Result<Var> {
        let table = vars.get(TOK_EMB)?;
        let Some(l) = latents else {
            return tape.gather(table, tokens);
        };
        let (a, n) = (self.config.slot_start(), self.config.n_thoughts);
        let shape = tape.shape(l).to_vec();
        if shape != [n, self.config.d_model] {
            return Err(Error::ShapeMismatch {
                op: "splice latents",
                left: vec![n, self.config.d_model],
                right: shape,
            });
        }
        if tokens.len() < a + n {
            return Err(Error::invalid("sequence shorter than the thought slots"));
        }
        let head = tape.gather(table, &tokens[..a])?;
        let mut parts = vec![head, l];
        if tokens.len() > a + n {
            parts.push(tape.gather(table, &tokens[a + n..])?);
        }
        tape.concat(&parts, 0)
    }

    /// Records next-token logits `[len, vocab]` for `tokens`, with the
    /// thought slots taken from `latents` when given.
    pub fn build_logits(&self, tape: &mut Tape, vars: &ParamVars, tokens: &[usize], latents: Option<Var>) -> Result<Var> {
        let len = tokens.len();
        if len == 0 || len > self.config.max_len() {
            return Err(Error::invalid(format!("sequence length {len} out of range")));
        }
        let x = self.embed(tape, vars, tokens, latents)?;
        let positions: Vec<usize> = (0..len).collect();
        let pos = tape.gather(vars.get(POS_EMB)?, &positions)?;
        let x = tape.add(x, pos)?;

        let q = tape.matmul(x, vars.get(ATTN_Q)?)?;
        let k = tape.matmul(x, vars.get(ATTN_K)?)?;
        let v = tape.matmul(x, vars.get(ATTN_V)?)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (self.config.d_model as f64).sqrt())?;
        let mask = tape.constant(causal_mask(len))?;
        let scores = tape.add(scores, mask)?;
        let attn = tape.softmax(scores)?;
        let mixed = tape.matmul(attn, v)?;
        let mixed = tape.matmul(mixed, vars.get(ATTN_O)?)?;
        let h = tape.add(x, mixed)?;

        let z = tape.matmul(h, vars.get(FF_W1)?)?;
        let z = tape.add_row(z, vars.get(FF_B1)?)?;
        let z = tape.tanh(z)?;
        let z = tape.matmul(z, vars.get(FF_W2)?)?;
        let z = tape.add_row(z, vars.get(FF_B2)?)?;
        let h = tape.add(h, z)?;

        let logits = tape.matmul(h, vars.get(OUT_W)?)?;
        tape.add_row(logits, vars.get(OUT_B)?)
    }

    /// Teacher-forced cross-entropy over the continuation of `inst`.
    pub fn build_loss(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        inst: &TaskInstance,
        latents: Option<Var>,
    ) -> Result<Var> {
        let mut tokens = prefix_tokens(&self.config, &inst.question_tokens)?;
        let targets = target_tokens(&self.config, inst);
        let first = tokens.len() - 1;
        tokens.extend_from_slice(&targets[..targets.len() - 1]);
        let logits = self.build_logits(tape, vars, &tokens, latents)?;
        let rows = tape.slice(logits, 0, first, targets.len())?;
        tape.cross_entropy(rows, &targets)
    }

    /// Next-token logits at the last position of `tokens`.
    pub fn next_logits(&self, tokens: &[usize], latents: Option<&Tensor>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false)?;
        let l = latents.map(|t| tape.constant(t.clone())).transpose()?;
        let logits = self.build_logits(&mut tape, &vars, tokens, l)?;
        Ok(tape.value(logits).row(tokens.len() - 1).to_vec())
    }

    /// Next-token distribution at the last position of `tokens`.
    pub fn next_distribution(&self, tokens: &[usize], latents: Option<&Tensor>) -> Result<Vec<f64>> {
        let logits = self.next_logits(tokens, latents)?;
        Ok(Tensor::vector(logits).softmax_last().into_data())
    }

    /// Decodes a continuation after the prefix. Temperature 0 is greedy;
    /// otherwise tokens are sampled from `softmax(logits / temperature)`.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        question_tokens: &[usize],
        latents: Option<&Tensor>,
        temperature: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!("invalid decode temperature {temperature}")));
        }
        let eos = self.vocab().eos();
        let mut tokens = prefix_tokens(&self.config, question_tokens)?;
        let start = tokens.len();
        loop {
            let logits = self.next_logits(&tokens, latents)?;
            let next = if temperature == 0.0 {
                argmax(&logits)
            } else {
                sample(&logits, temperature, rng)
            };
            tokens.push(next);
            if next == eos {
                break;
            }
            if tokens.len() - start >= MAX_DECODE_TOKENS {
                return Err(Error::Truncated {
                    max: MAX_DECODE_TOKENS,
                });
            }
        }
        Ok(tokens.split_off(start))
    }
}

fn causal_mask(len: usize) -> Tensor {
    let mut m = Tensor::zeros(&[len, len]);
    let data = m.data_mut();
    for i in 0..len {
        for j in i + 1..len {
            data[i * len + j] = MASKED;
        }
    }
    m
}

/// Index of the largest entry, first on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|&z| z / temperature).collect();
    let probs = Tensor::vector(scaled).softmax_last().into_data();
    let mut u: f64 = rng.gen();
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}
