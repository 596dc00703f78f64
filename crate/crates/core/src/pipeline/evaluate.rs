//! Held-out evaluation: chains per question, votes, and the report.

use crate::config::RunConfig;
use crate::error::Result;
use crate::eval::{EvalReport, QuestionRecord};

use super::head::TrainableHead;
use super::infer::{inference_langevin, sample_chains};
use super::pretrain::FrozenModels;
use super::task::TaskInstance;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub n_chains: usize,
    pub decode_temperature: f64,
    /// Langevin steps at inference; 0 is the projection-only ablation.
    pub calibration_steps: usize,
    pub inference_noise: bool,
}

impl EvalOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        EvalOptions {
            n_chains: cfg.eval.n_chains,
            decode_temperature: cfg.eval.decode_temperature,
            calibration_steps: cfg.langevin.steps,
            inference_noise: cfg.eval.inference_noise,
        }
    }
}

pub fn evaluate(
    questions: &[TaskInstance],
    models: &FrozenModels,
    head: &TrainableHead,
    cfg: &RunConfig,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let langevin = inference_langevin(&cfg.langevin, opts.calibration_steps, opts.inference_noise);
    let mut records = Vec::with_capacity(questions.len());
    for q in questions {
        let set = sample_chains(
            &q.question_tokens,
            q.id,
            models,
            head,
            &langevin,
            opts.n_chains,
            opts.decode_temperature,
            cfg.seed(),
        )?;
        let answers = set.chains.iter().map(|c| c.decoded.answer).collect();
        records.push(QuestionRecord::new(q.id, q.answer_token, answers, &set.energy_trace)?);
    }
    EvalReport::from_records(records, opts.n_chains, opts.calibration_steps, opts.decode_temperature)
}
