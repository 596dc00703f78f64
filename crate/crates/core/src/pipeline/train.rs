//! Joint training of the projection and the energy network against the
//! frozen base.
//!
//! Per question: assistant states are projected to the raw block `l_raw`,
//! a noisy Langevin chain refines it to `l_cal`, and `l_cal` replaces the
//! thought slots of the base input. The loss is the base cross-entropy on
//! the reasoning and answer plus `alpha` times the hinge and consistency
//! terms. Gradients are assembled by hand from three pieces: the base's
//! gradient with respect to `l_cal`, direct energy gradients, and the
//! gradient through the chain selected by [`BackpropMode`].

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{BackpropMode, RunConfig};
use crate::energy::EnergyFunction;
use crate::error::{Error, Result};
use crate::gradcheck::rel_error;
use crate::langevin::{
    autodiff_unrolled_grad, linear_readout, replay, unrolled_latent_grad, unrolled_param_grad,
    LangevinConfig,
};
use crate::losses::{consistency_grad, consistency_loss, hinge_loss, hinge_subgradient, total_loss, LossConfig};
use crate::params::Gradients;
use crate::rng::{pair_index, stream_rng, Stream};
use crate::tape::Tape;
use crate::tensor::Tensor;

use super::head::{HeadOptimizer, TrainableHead};
use super::infer::{calibrate_question, Calibration};
use super::pretrain::FrozenModels;
use super::task::TaskInstance;

/// Losses of one question.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleLosses {
    pub l_lm: f64,
    pub l_h: f64,
    pub l_c: f64,
    pub e_raw: f64,
    pub e_cal: f64,
}

/// Teacher-forced cross-entropy of the frozen base with `latents` spliced
/// in, and its gradient with respect to `latents`.
pub fn lm_loss_and_grad(models: &FrozenModels, inst: &TaskInstance, latents: &Tensor) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let vars = models.base.params().register(&mut tape, false)?;
    let l = tape.leaf(latents.clone())?;
    let loss = models.base.build_loss(&mut tape, &vars, inst, Some(l))?;
    let value = tape.value(loss).item()?;
    let g = tape.gradients(loss, &[l])?.remove(0);
    Ok((value, g))
}

fn example_losses(models: &FrozenModels, inst: &TaskInstance, cal: &Calibration, loss: &LossConfig) -> Result<ExampleLosses> {
    let l_cal = cal.calibrated();
    let (l_lm, _) = lm_loss_and_grad(models, inst, l_cal)?;
    let energies = cal.trajectory.energies();
    let (e_raw, e_cal) = (energies[0], energies[energies.len() - 1]);
    Ok(ExampleLosses {
        l_lm,
        l_h: hinge_loss(e_raw, e_cal, loss.margin, loss.hinge_orientation),
        l_c: consistency_loss(l_cal, cal.raw.tensor(), loss.lambda)?,
        e_raw,
        e_cal,
    })
}

/// Gradient of one question's total loss, plus the chain-gradient audit
/// (relative error between closed form and autodiff) when requested.
pub struct ExampleGradient {
    pub losses: ExampleLosses,
    pub grads: Gradients,
    pub audit: Option<f64>,
}

pub fn example_gradient(
    models: &FrozenModels,
    head: &TrainableHead,
    inst: &TaskInstance,
    cal: &Calibration,
    cfg: &RunConfig,
    mode: BackpropMode,
    audit: bool,
) -> Result<ExampleGradient> {
    let loss_cfg = &cfg.loss;
    let alpha = loss_cfg.alpha;
    let energy = &head.energy;
    let ctx = &cal.context;
    let l_raw = cal.raw.tensor();
    let l_cal = cal.calibrated();
    let cal_block = cal.trajectory.last();

    let (l_lm, g_lm) = lm_loss_and_grad(models, inst, l_cal)?;
    let energies = cal.trajectory.energies();
    let (e_raw, e_cal) = (energies[0], energies[energies.len() - 1]);
    let (d_raw, d_cal) = hinge_subgradient(e_raw, e_cal, loss_cfg.margin, loss_cfg.hinge_orientation);
    let c_grad = consistency_grad(l_cal, l_raw, loss_cfg.lambda)?;

    // dL/dl_cal holding l_raw fixed.
    let mut upstream = g_lm;
    upstream.axpy(alpha, &c_grad)?;
    if d_cal != 0.0 {
        upstream.axpy(alpha * d_cal, &energy.grad_latent(ctx, cal_block)?)?;
    }

    let mut grads = Gradients::zeros_like(energy.params());
    if d_raw != 0.0 {
        grads.add_scaled(alpha * d_raw, &energy.grad_params(ctx, &cal.raw)?)?;
    }
    if d_cal != 0.0 {
        grads.add_scaled(alpha * d_cal, &energy.grad_params(ctx, cal_block)?)?;
    }

    let closed = || unrolled_param_grad(energy, &cal.trajectory, &upstream);
    let taped = || {
        autodiff_unrolled_grad(
            energy,
            ctx,
            &cal.raw,
            cal.trajectory.config(),
            cal.trajectory.noises(),
            linear_readout(upstream.clone()),
        )
    };
    let (chain, audit_err) = match mode {
        BackpropMode::UnrollClosedForm | BackpropMode::UnrollAutodiff => {
            let (primary, other): (_, &dyn Fn() -> Result<_>) = if mode == BackpropMode::UnrollClosedForm {
                (closed()?, &taped)
            } else {
                (taped()?, &closed)
            };
            let err = if audit {
                let check = other()?;
                Some(rel_error(&primary.params.flatten(), &check.params.flatten()))
            } else {
                None
            };
            (primary, err)
        }
        BackpropMode::Detached => {
            let err = if audit {
                let (a, b) = (closed()?, taped()?);
                Some(rel_error(&a.params.flatten(), &b.params.flatten()))
            } else {
                None
            };
            let initial = unrolled_latent_grad(energy, &cal.trajectory, &upstream)?;
            (
                crate::langevin::UnrolledGradient {
                    params: Gradients::zeros_like(energy.params()),
                    initial,
                },
                err,
            )
        }
    };
    grads.add_scaled(1.0, &chain.params)?;

    // dL/dl_raw: the chain contribution plus the terms where l_raw appears
    // directly.
    let mut u0 = chain.initial;
    u0.axpy(-alpha, &c_grad)?;
    if d_raw != 0.0 {
        u0.axpy(alpha * d_raw, &energy.grad_latent(ctx, &cal.raw)?)?;
    }
    let hidden = models.assistant.thoughts(&inst.question_tokens)?;
    grads.add_scaled(1.0, &head.projection.backward(&hidden, &u0)?)?;

    let losses = ExampleLosses {
        l_lm,
        l_h: hinge_loss(e_raw, e_cal, loss_cfg.margin, loss_cfg.hinge_orientation),
        l_c: consistency_loss(l_cal, l_raw, loss_cfg.lambda)?,
        e_raw,
        e_cal,
    };
    Ok(ExampleGradient {
        losses,
        grads,
        audit: audit_err,
    })
}

/// Loss record of one optimisation step, batch means throughout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_lm: f64,
    pub l_h: f64,
    pub l_c: f64,
    pub l_ebm: f64,
    pub l_total: f64,
    pub energy_raw: f64,
    pub energy_calibrated: f64,
    /// Closed form vs autodiff relative error on audited steps.
    pub audit_rel_error: Option<f64>,
}

/// Noise stream for question `b` of step `step`.
pub fn step_noise_rng(seed: u64, step: usize, b: usize) -> rand_chacha::ChaCha8Rng {
    stream_rng(seed, Stream::Langevin, pair_index(step as u64, b as u64))
}

/// Calibrations for a batch, with noise from the step's streams.
pub fn calibrate_batch(
    models: &FrozenModels,
    head: &TrainableHead,
    batch: &[TaskInstance],
    langevin: &LangevinConfig,
    seed: u64,
    step: usize,
) -> Result<Vec<Calibration>> {
    batch
        .iter()
        .enumerate()
        .map(|(b, inst)| {
            calibrate_question(&inst.question_tokens, models, head, langevin, &mut step_noise_rng(seed, step, b))
        })
        .collect()
}

/// Batch-mean total loss with the chain replayed from fixed noise. This is
/// the function whose gradient [`batch_gradient`] returns.
pub fn batch_loss(
    models: &FrozenModels,
    head: &TrainableHead,
    batch: &[TaskInstance],
    noises: &[Vec<Tensor>],
    cfg: &RunConfig,
) -> Result<f64> {
    if batch.is_empty() || noises.len() != batch.len() {
        return Err(Error::invalid("batch and noise lists must be nonempty and aligned"));
    }
    let mut total = 0.0;
    for (inst, eps) in batch.iter().zip(noises) {
        let hidden = models.assistant.thoughts(&inst.question_tokens)?;
        let raw = crate::energy::ThoughtBlock::new(head.projection.apply(&hidden)?)?;
        let context = models.base.question_context(&inst.question_tokens)?;
        let trajectory = replay(&head.energy, &context, &raw, &cfg.langevin, eps)?;
        let cal = Calibration {
            context,
            raw,
            trajectory,
        };
        let l = example_losses(models, inst, &cal, &cfg.loss)?;
        total += total_loss(l.l_lm, l.l_h + l.l_c, cfg.loss.alpha);
    }
    Ok(total / batch.len() as f64)
}

/// Batch-mean gradient over the calibrations `cals`.
pub fn batch_gradient(
    models: &FrozenModels,
    head: &TrainableHead,
    batch: &[TaskInstance],
    cals: &[Calibration],
    cfg: &RunConfig,
    audit: bool,
) -> Result<(Gradients, Vec<ExampleLosses>, Option<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch_gradient"));
    }
    let mut grads = Gradients::zeros_like(&head.to_params()?);
    let mut losses = Vec::with_capacity(batch.len());
    let mut worst: Option<f64> = None;
    for (inst, cal) in batch.iter().zip(cals) {
        let eg = example_gradient(models, head, inst, cal, cfg, cfg.train.backprop_mode, audit)?;
        grads.add_scaled(1.0, &eg.grads)?;
        losses.push(eg.losses);
        if let Some(e) = eg.audit {
            worst = Some(worst.map_or(e, |w: f64| w.max(e)));
        }
    }
    grads.scale(1.0 / batch.len() as f64);
    Ok((grads, losses, worst))
}

/// Largest closed-form vs autodiff discrepancy tolerated on an audit.
pub const AUDIT_TOLERANCE: f64 = 1e-3;

/// One optimisation step. Base and assistant are only read.
pub fn train_step(
    models: &FrozenModels,
    head: &mut TrainableHead,
    opt: &mut HeadOptimizer,
    batch: &[TaskInstance],
    cfg: &RunConfig,
    step: usize,
    epoch: usize,
) -> Result<StepRecord> {
    let audit = step % cfg.train.audit_every == 0;
    let cals = calibrate_batch(models, head, batch, &cfg.langevin, cfg.seed(), step)?;
    let (grads, losses, audit_err) = batch_gradient(models, head, batch, &cals, cfg, audit)?;
    let n = losses.len() as f64;
    let mean = |f: fn(&ExampleLosses) -> f64| losses.iter().map(f).sum::<f64>() / n;
    let l_lm = mean(|l| l.l_lm);
    let l_h = mean(|l| l.l_h);
    let l_c = mean(|l| l.l_c);
    let l_ebm = l_h + l_c;
    let record = StepRecord {
        step,
        epoch,
        l_lm,
        l_h,
        l_c,
        l_ebm,
        l_total: total_loss(l_lm, l_ebm, cfg.loss.alpha),
        energy_raw: mean(|l| l.e_raw),
        energy_calibrated: mean(|l| l.e_cal),
        audit_rel_error: audit_err,
    };
    if !record.l_total.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite {
            op: format!(
                "training step {step}: l_lm={} l_h={} l_c={} finite_grads={}",
                record.l_lm,
                record.l_h,
                record.l_c,
                grads.is_finite()
            ),
        });
    }
    if let Some(e) = audit_err {
        if e > AUDIT_TOLERANCE {
            return Err(Error::NumericCheck(format!(
                "chain gradient audit failed at step {step}: relative error {e:.3e}"
            )));
        }
    }
    head.apply_update(opt, &grads)?;
    Ok(record)
}

/// Full training run over `train` with a per-epoch shuffle.
pub fn train(
    models: &FrozenModels,
    head: &mut TrainableHead,
    train: &[TaskInstance],
    cfg: &RunConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    if train.is_empty() {
        return Err(Error::Empty("train"));
    }
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let mut opt = HeadOptimizer::new(cfg.train.optimizer, cfg.train.learning_rate);
    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut stream_rng(cfg.seed(), Stream::Shuffle, (1 << 32) + epoch as u64));
        for chunk in order.chunks(cfg.train.batch_size) {
            let batch: Vec<TaskInstance> = chunk.iter().map(|&i| train[i].clone()).collect();
            let record = train_step(models, head, &mut opt, &batch, cfg, step, epoch)?;
            on_step(&record);
            records.push(record);
            step += 1;
        }
    }
    Ok(records)
}

/// Untrained head: projection bias at the base placeholder embedding.
pub fn init_head(cfg: &RunConfig, models: &FrozenModels) -> Result<TrainableHead> {
    let think = models.base.think_block()?;
    let bias = Tensor::vector(think.row(0).to_vec());
    let projection = super::head::Projection::new(
        cfg.model.d_asst,
        bias,
        cfg.model.projection_init_std,
        &mut stream_rng(cfg.seed(), Stream::Init, 2),
    )?;
    let energy = crate::energy::EnergyModel::new(cfg.energy_config(), &mut stream_rng(cfg.seed(), Stream::Init, 3))?;
    Ok(TrainableHead::new(projection, energy))
}

/// Noise draws of `cal`, for replaying the same step.
pub fn recorded_noises(cals: &[Calibration]) -> Vec<Vec<Tensor>> {
    cals.iter().map(|c| c.trajectory.noises().to_vec()).collect()
}
