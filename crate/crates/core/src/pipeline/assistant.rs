//! Frozen tanh recurrent encoder that reads the question followed by the
//! thought placeholders and emits its hidden state at each placeholder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

use super::base::{prefix_tokens, BaseConfig};

const TOK_EMB: &str = "assistant.tok_emb";
const W_IN: &str = "assistant.rnn.w_in";
const W_REC: &str = "assistant.rnn.w_rec";
const BIAS: &str = "assistant.rnn.bias";

#[derive(Clone, Debug, PartialEq)]
pub struct ToyAssistantModel {
    layout: BaseConfig,
    d: usize,
    params: ParamSet,
}

impl ToyAssistantModel {
    /// `layout` fixes the vocabulary and slot positions shared with the base.
    pub fn new<R: Rng + ?Sized>(layout: BaseConfig, d: usize, rng: &mut R) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("assistant width must be positive"));
        }
        let v = layout.vocab().size();
        let s = 1.0 / (d as f64).sqrt();
        let mut params = ParamSet::new();
        params.insert(TOK_EMB, Tensor::randn(&[v, d], 1.0, rng));
        params.insert(W_IN, Tensor::randn(&[d, d], s, rng));
        params.insert(W_REC, Tensor::randn(&[d, d], 0.9 * s, rng));
        params.insert(BIAS, Tensor::zeros(&[d]));
        params.freeze_all();
        Ok(ToyAssistantModel { layout, d, params })
    }

    pub fn from_params(layout: BaseConfig, d: usize, params: ParamSet) -> Result<Self> {
        let v = layout.vocab().size();
        let mut expected = vec![
            (TOK_EMB.to_string(), vec![v, d]),
            (W_IN.to_string(), vec![d, d]),
            (W_REC.to_string(), vec![d, d]),
            (BIAS.to_string(), vec![d]),
        ];
        expected.sort();
        let actual: Vec<(String, Vec<usize>)> = params
            .iter()
            .map(|(k, e)| (k.clone(), e.value.shape().to_vec()))
            .collect();
        if actual != expected {
            return Err(Error::invalid(format!(
                "assistant parameter layout mismatch: expected {expected:?}, got {actual:?}"
            )));
        }
        Ok(ToyAssistantModel { layout, d, params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.d
    }

    /// Hidden states at the thought slots, `[n_thoughts, d]`.
    pub fn thoughts(&self, question_tokens: &[usize]) -> Result<Tensor> {
        let tokens = prefix_tokens(&self.layout, question_tokens)?;
        let emb = self.params.get(TOK_EMB)?.gather_rows(&tokens)?;
        let inputs = emb.matmul(self.params.get(W_IN)?)?;
        let w_rec = self.params.get(W_REC)?;
        let bias = self.params.get(BIAS)?;
        let mut h = Tensor::zeros(&[1, self.d]);
        let mut out = Vec::with_capacity(self.layout.n_thoughts * self.d);
        for t in 0..tokens.len() {
            let pre = h
                .matmul(w_rec)?
                .add(&Tensor::new(vec![1, self.d], inputs.row(t).to_vec())?)?
                .add(&bias.reshape(&[1, self.d])?)?;
            h = pre.map(f64::tanh);
            if t >= self.layout.slot_start() {
                out.extend_from_slice(h.data());
            }
        }
        Tensor::new(vec![self.layout.n_thoughts, self.d], out)
    }
}
