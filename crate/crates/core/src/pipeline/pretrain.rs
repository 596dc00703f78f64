//! Supervised pretraining of the base decoder on questions with
//! placeholder thought slots, then freezing of base and assistant.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::params::{Adam, Gradients, ParamSet};
use crate::rng::{stream_rng, Stream};
use crate::tape::Tape;

use super::assistant::ToyAssistantModel;
use super::base::ToyBaseModel;
use super::infer::parse_continuation;
use super::task::TaskInstance;

/// The two frozen models shared by training and inference.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenModels {
    pub base: ToyBaseModel,
    pub assistant: ToyAssistantModel,
}

impl FrozenModels {
    /// Freshly initialised models from the run's init stream.
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        let layout = cfg.base_config();
        let base = ToyBaseModel::new(layout.clone(), &mut stream_rng(cfg.seed(), Stream::Init, 0))?;
        let assistant = ToyAssistantModel::new(layout, cfg.model.d_asst, &mut stream_rng(cfg.seed(), Stream::Init, 1))?;
        Ok(FrozenModels { base, assistant })
    }

    pub fn from_params(cfg: &RunConfig, base: ParamSet, assistant: ParamSet) -> Result<Self> {
        let layout = cfg.base_config();
        Ok(FrozenModels {
            base: ToyBaseModel::from_params(layout.clone(), base)?,
            assistant: ToyAssistantModel::from_params(layout, cfg.model.d_asst, assistant)?,
        })
    }

    /// Checkpoint digests of base and assistant.
    pub fn digests(&self) -> Result<(String, String)> {
        Ok((self.base.params().digest()?, self.assistant.params().digest()?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub probe_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub models: FrozenModels,
    pub curve: Vec<EpochRecord>,
    pub target_met: bool,
}

/// Fraction of `questions` whose greedy decode with placeholder slots
/// yields the right answer.
pub fn greedy_accuracy(base: &ToyBaseModel, questions: &[TaskInstance]) -> Result<f64> {
    if questions.is_empty() {
        return Err(Error::Empty("greedy_accuracy"));
    }
    let mut rng = stream_rng(0, Stream::Decode, 0);
    let mut correct = 0usize;
    for q in questions {
        let answer = match base.generate(&q.question_tokens, None, 0.0, &mut rng) {
            Ok(tokens) => parse_continuation(&base.vocab(), &tokens).answer,
            Err(Error::Truncated { .. }) => None,
            Err(e) => return Err(e),
        };
        correct += usize::from(answer == Some(q.answer_token));
    }
    Ok(correct as f64 / questions.len() as f64)
}

/// Mean teacher-forced loss and its gradient over `batch`.
pub fn base_batch_gradient(base: &ToyBaseModel, batch: &[TaskInstance]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("base_batch_gradient"));
    }
    let mut total = Gradients::zeros_like(base.params());
    let mut loss = 0.0;
    for inst in batch {
        let mut tape = Tape::new();
        let vars = base.params().register(&mut tape, true)?;
        let l = base.build_loss(&mut tape, &vars, inst, None)?;
        loss += tape.value(l).item()?;
        total.add_scaled(1.0, &vars.gradients(&mut tape, l)?)?;
    }
    let scale = 1.0 / batch.len() as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

/// Trains the base until the probe accuracy reaches the configured target
/// or the epoch budget runs out, then freezes both models.
pub fn pretrain_base(
    cfg: &RunConfig,
    train: &[TaskInstance],
    probe: &[TaskInstance],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<PretrainOutcome> {
    if train.is_empty() || probe.is_empty() {
        return Err(Error::invalid("pretraining needs training and probe questions"));
    }
    let FrozenModels { mut base, assistant } = FrozenModels::init(cfg)?;
    let tc = &cfg.train;
    let mut adam = Adam::new(tc.pretrain_learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::new();
    let mut target_met = false;
    for epoch in 0..tc.pretrain_epochs {
        order.shuffle(&mut stream_rng(cfg.seed(), Stream::Shuffle, epoch as u64));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tc.pretrain_batch_size) {
            let batch: Vec<TaskInstance> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = base_batch_gradient(&base, &batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("pretraining loss at epoch {epoch}"),
                });
            }
            adam.step(base.params_mut(), &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / batches as f64,
            probe_accuracy: greedy_accuracy(&base, probe)?,
        };
        on_epoch(&record);
        curve.push(record.clone());
        if record.probe_accuracy >= tc.pretrain_target_accuracy {
            target_met = true;
            break;
        }
    }
    base.freeze();
    Ok(PretrainOutcome {
        models: FrozenModels { base, assistant },
        curve,
        target_met,
    })
}
