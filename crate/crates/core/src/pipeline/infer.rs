//! Calibrated inference and multi-chain sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{Context, ThoughtBlock};
use crate::error::{Error, Result};
use crate::langevin::{calibrate, LangevinConfig, LangevinTrajectory};
use crate::rng::{pair_index, stream_rng, Stream};
use crate::tensor::Tensor;

use super::head::TrainableHead;
use super::pretrain::FrozenModels;
use super::task::Vocab;

/// Reasoning digits and answer read off a decoded continuation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoded {
    pub reasoning: Vec<u32>,
    pub answer: Option<u32>,
}

/// Digits up to the first answer token; the answer is that token's value.
pub fn parse_continuation(vocab: &Vocab, tokens: &[usize]) -> Decoded {
    let mut reasoning = Vec::new();
    for &t in tokens {
        if let Some(a) = vocab.as_answer(t) {
            return Decoded {
                reasoning,
                answer: Some(a),
            };
        }
        match vocab.as_digit(t) {
            Some(d) => reasoning.push(d),
            None => break,
        }
    }
    Decoded {
        reasoning,
        answer: None,
    }
}

/// Raw and calibrated latents for one question.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub context: Context,
    pub raw: ThoughtBlock,
    pub trajectory: LangevinTrajectory,
}

impl Calibration {
    pub fn calibrated(&self) -> &Tensor {
        self.trajectory.last().tensor()
    }
}

/// Assistant forward, projection, then `cfg.steps` Langevin updates.
pub fn calibrate_question<R: Rng + ?Sized>(
    question_tokens: &[usize],
    models: &FrozenModels,
    head: &TrainableHead,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<Calibration> {
    let hidden = models.assistant.thoughts(question_tokens)?;
    let raw = ThoughtBlock::new(head.projection.apply(&hidden)?)?;
    let context = models.base.question_context(question_tokens)?;
    let trajectory = calibrate(&head.energy, &context, &raw, cfg, rng)?;
    Ok(Calibration {
        context,
        raw,
        trajectory,
    })
}

/// Langevin settings used at inference: `steps` updates, noise only if asked.
pub fn inference_langevin(base: &LangevinConfig, steps: usize, noise: bool) -> LangevinConfig {
    LangevinConfig {
        steps,
        noise_enabled: noise,
        ..base.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub tokens: Vec<usize>,
    pub decoded: Decoded,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSet {
    pub chains: Vec<Chain>,
    /// Energy of the block before and after every Langevin step.
    pub energy_trace: Vec<f64>,
}

/// Calibrates once, then decodes `n` chains; chain `i` draws from the decode
/// stream at `(question_id, i)`. Chains hitting the length cap are kept and
/// flagged as truncated.
#[allow(clippy::too_many_arguments)]
pub fn sample_chains(
    question_tokens: &[usize],
    question_id: u64,
    models: &FrozenModels,
    head: &TrainableHead,
    langevin: &LangevinConfig,
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<ChainSet> {
    if n == 0 {
        return Err(Error::invalid("at least one chain is required"));
    }
    let mut noise_rng = stream_rng(seed, Stream::Langevin, pair_index(u32::MAX as u64, question_id));
    let cal = calibrate_question(question_tokens, models, head, langevin, &mut noise_rng)?;
    let latents = cal.calibrated();
    let vocab = models.base.vocab();
    let mut chains = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, Stream::Decode, pair_index(question_id, i as u64));
        let chain = match models.base.generate(question_tokens, Some(latents), temperature, &mut rng) {
            Ok(tokens) => Chain {
                decoded: parse_continuation(&vocab, &tokens),
                tokens,
                truncated: false,
            },
            Err(Error::Truncated { .. }) => Chain {
                tokens: Vec::new(),
                decoded: Decoded {
                    reasoning: Vec::new(),
                    answer: None,
                },
                truncated: true,
            },
            Err(e) => return Err(e),
        };
        chains.push(chain);
    }
    Ok(ChainSet {
        chains,
        energy_trace: cal.trajectory.energies().to_vec(),
    })
}

/// Single-chain inference. Unlike [`sample_chains`], hitting the decode
/// length cap is an error.
pub fn infer(
    question_tokens: &[usize],
    question_id: u64,
    models: &FrozenModels,
    head: &TrainableHead,
    langevin: &LangevinConfig,
    temperature: f64,
    seed: u64,
) -> Result<ChainSet> {
    let set = sample_chains(question_tokens, question_id, models, head, langevin, 1, temperature, seed)?;
    if set.chains[0].truncated {
        return Err(Error::Truncated {
            max: super::base::MAX_DECODE_TOKENS,
        });
    }
    Ok(set)
}
