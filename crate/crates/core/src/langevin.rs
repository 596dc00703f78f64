//! Langevin calibration of thought blocks and gradients through the chain.
//!
//! A chain runs `l <- l - eta * grad_l E(ctx, l) + sqrt(2 eta) * eps` for a
//! fixed number of steps. Noise draws are recorded on the trajectory so that
//! the map from energy parameters to the final state is deterministic and
//! can be differentiated. Two independent differentiators are provided:
//!
//! * [`unrolled_param_grad`] walks the recorded states right to left,
//!   carrying a row vector `u` through `(I - eta * A_j)` with finite
//!   difference Hessian-vector products and collecting `u . C_j` from the
//!   energy's mixed vector-Jacobian product. No Jacobian is materialised.
//! * [`autodiff_unrolled_grad`] writes the whole chain, energy gradients
//!   included, on one tape and runs reverse mode over it.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::{Context, EnergyFunction, ThoughtBlock};
use crate::error::{Error, Result};
use crate::hvp::hvp_latent;
use crate::params::Gradients;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// States with `|l|_inf` above this abort the chain.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinConfig {
    pub eta: f64,
    pub steps: usize,
    pub noise_enabled: bool,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            eta: 0.1,
            steps: 3,
            noise_enabled: true,
        }
    }
}

impl LangevinConfig {
    pub fn new(eta: f64, steps: usize, noise_enabled: bool) -> Self {
        LangevinConfig {
            eta,
            steps,
            noise_enabled,
        }
    }

    /// `sqrt(2 * eta)`
    pub fn noise_scale(&self) -> f64 {
        (2.0 * self.eta).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }

    /// Same settings with noise switched off.
    pub fn deterministic(&self) -> Self {
        LangevinConfig {
            noise_enabled: false,
            ..self.clone()
        }
    }
}

/// One update `l - eta * grad + sqrt(2 eta) * noise`.
pub fn langevin_step(block: &Tensor, grad: &Tensor, eta: f64, noise: &Tensor, step: usize) -> Result<Tensor> {
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("eta must be positive, got {eta}")));
    }
    let scale = (2.0 * eta).sqrt();
    let mut next = block.clone();
    next.axpy(-eta, grad)?;
    next.axpy(scale, noise)?;
    if !next.is_finite() {
        return Err(Error::NonFiniteStep { step });
    }
    Ok(next)
}

/// Recorded chain `l^(0..S)` together with the noise that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LangevinTrajectory {
    states: Vec<ThoughtBlock>,
    noises: Vec<Tensor>,
    energies: Vec<f64>,
    config: LangevinConfig,
    context: Context,
}

impl LangevinTrajectory {
    pub fn states(&self) -> &[ThoughtBlock] {
        &self.states
    }

    pub fn noises(&self) -> &[Tensor] {
        &self.noises
    }

    /// `E(l^(s))` for every recorded state.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn config(&self) -> &LangevinConfig {
        &self.config
    }

    pub fn context(&self) -> &Context {
        &self.context
    }

    pub fn initial(&self) -> &ThoughtBlock {
        &self.states[0]
    }

    /// The calibrated block `l^(S)`.
    pub fn last(&self) -> &ThoughtBlock {
        self.states.last().expect("trajectory always holds l^(0)")
    }

    /// Re-runs the updates from `l^(0)` with the recorded noise.
    pub fn replay<E: EnergyFunction + ?Sized>(&self, model: &E) -> Result<LangevinTrajectory> {
        replay(model, &self.context, self.initial(), &self.config, &self.noises)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            config: &'a LangevinConfig,
            energies: &'a [f64],
            states: Vec<&'a Tensor>,
            noises: &'a [Tensor],
        }
        Ok(serde_json::to_string(&Doc {
            config: &self.config,
            energies: &self.energies,
            states: self.states.iter().map(ThoughtBlock::tensor).collect(),
            noises: &self.noises,
        })?)
    }

    fn check_consistent(&self) -> Result<()> {
        let s = self.config.steps;
        if self.states.len() != s + 1 || self.noises.len() != s {
            return Err(Error::invalid(format!(
                "trajectory/config mismatch: {} states, {} noises, {} steps",
                self.states.len(),
                self.noises.len(),
                s
            )));
        }
        Ok(())
    }
}

fn energy_and_grad<E: EnergyFunction + ?Sized>(
    model: &E,
    ctx: &Context,
    block: &ThoughtBlock,
) -> Result<(f64, Tensor)> {
    let mut tape = Tape::new();
    let params = model.params().register(&mut tape, false)?;
    let l = tape.leaf(block.tensor().clone())?;
    let e = model.build(&mut tape, &params, ctx, l)?;
    let value = tape.value(e).item()?;
    let grad = tape.gradients(e, &[l])?.remove(0);
    Ok((value, grad))
}

fn run<E, N>(model: &E, ctx: &Context, init: &ThoughtBlock, cfg: &LangevinConfig, mut noise: N) -> Result<LangevinTrajectory>
where
    E: EnergyFunction + ?Sized,
    N: FnMut(usize, &[usize]) -> Result<Tensor>,
{
    cfg.validate()?;
    if !init.tensor().is_finite() {
        return Err(Error::NonFinite {
            op: "Langevin initial state".into(),
        });
    }
    let mut states = Vec::with_capacity(cfg.steps + 1);
    let mut noises = Vec::with_capacity(cfg.steps);
    let mut energies = Vec::with_capacity(cfg.steps + 1);
    states.push(init.clone());
    for s in 0..cfg.steps {
        let current = states[s].tensor();
        let (e, g) = energy_and_grad(model, ctx, &states[s])?;
        energies.push(e);
        let eps = noise(s, current.shape())?;
        let next = langevin_step(current, &g, cfg.eta, &eps, s)?;
        let norm = next.max_abs();
        if norm > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                step: s + 1,
                norm,
                eta: cfg.eta,
                steps: cfg.steps,
            });
        }
        noises.push(eps);
        states.push(ThoughtBlock::new(next)?);
    }
    energies.push(model.energy(ctx, states.last().expect("nonempty"))?);
    Ok(LangevinTrajectory {
        states,
        noises,
        energies,
        config: cfg.clone(),
        context: ctx.clone(),
    })
}

/// Runs `cfg.steps` Langevin updates from `init`. With noise disabled the
/// chain is plain gradient descent on the energy and `rng` is untouched.
pub fn calibrate<E, R>(model: &E, ctx: &Context, init: &ThoughtBlock, cfg: &LangevinConfig, rng: &mut R) -> Result<LangevinTrajectory>
where
    E: EnergyFunction + ?Sized,
    R: Rng + ?Sized,
{
    let enabled = cfg.noise_enabled;
    run(model, ctx, init, cfg, |_, shape| {
        Ok(if enabled {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            Tensor::new(shape.to_vec(), data)?
        } else {
            Tensor::zeros(shape)
        })
    })
}

/// Runs the chain with externally supplied noise draws.
pub fn replay<E: EnergyFunction + ?Sized>(
    model: &E,
    ctx: &Context,
    init: &ThoughtBlock,
    cfg: &LangevinConfig,
    noises: &[Tensor],
) -> Result<LangevinTrajectory> {
    if noises.len() != cfg.steps {
        return Err(Error::invalid(format!(
            "{} recorded noises for {} steps",
            noises.len(),
            cfg.steps
        )));
    }
    run(model, ctx, init, cfg, |s, shape| {
        if noises[s].shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "replay noise",
                left: shape.to_vec(),
                right: noises[s].shape().to_vec(),
            });
        }
        Ok(noises[s].clone())
    })
}

/// Gradient of a downstream loss through a Langevin chain.
#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledGradient {
    /// `dL/dphi` accumulated through every step.
    pub params: Gradients,
    /// `dL/dl^(0)`, i.e. the upstream vector after all `(I - eta A)` factors.
    pub initial: Tensor,
}

/// Closed-form chain gradient
/// `dL/dphi = -eta * sum_k (dL/dl^(S)) [prod_{j>k} (I - eta A_j)] C_k`,
/// evaluated right to left with Hessian-vector products.
pub fn unrolled_param_grad<E: EnergyFunction + ?Sized>(
    model: &E,
    trajectory: &LangevinTrajectory,
    upstream: &Tensor,
) -> Result<UnrolledGradient> {
    unroll(model, trajectory, upstream, true)
}

/// `dL/dl^(0)` alone: the upstream vector carried through every
/// `(I - eta A_j)` factor, with no parameter terms.
pub fn unrolled_latent_grad<E: EnergyFunction + ?Sized>(
    model: &E,
    trajectory: &LangevinTrajectory,
    upstream: &Tensor,
) -> Result<Tensor> {
    Ok(unroll(model, trajectory, upstream, false)?.initial)
}

fn unroll<E: EnergyFunction + ?Sized>(
    model: &E,
    trajectory: &LangevinTrajectory,
    upstream: &Tensor,
    with_params: bool,
) -> Result<UnrolledGradient> {
    trajectory.check_consistent()?;
    let last = trajectory.last().tensor();
    if upstream.shape() != last.shape() {
        return Err(Error::ShapeMismatch {
            op: "unrolled_param_grad upstream",
            left: last.shape().to_vec(),
            right: upstream.shape().to_vec(),
        });
    }
    let eta = trajectory.config.eta;
    let ctx = &trajectory.context;
    let mut grads = Gradients::zeros_like(model.params());
    let mut u = upstream.clone();
    for j in (0..trajectory.config.steps).rev() {
        let state = &trajectory.states[j];
        if with_params {
            let uc = model.grad_latent_vjp(ctx, state, &u)?;
            grads.add_scaled(-eta, &uc)?;
        }
        // A_j is symmetric, so u A_j = A_j u.
        let hu = hvp_latent(
            |l| model.grad_latent(ctx, &ThoughtBlock::new(l.clone())?),
            state.tensor(),
            &u,
        )?;
        u.axpy(-eta, &hu)?;
    }
    if !grads.is_finite() || !u.is_finite() {
        return Err(Error::NonFinite {
            op: "unrolled_param_grad".into(),
        });
    }
    Ok(UnrolledGradient {
        params: grads,
        initial: u,
    })
}

/// Reverse mode through the full chain recorded on a single tape. The
/// `downstream` closure maps the final state node to a scalar loss node.
pub fn autodiff_unrolled_grad<E, F>(
    model: &E,
    ctx: &Context,
    init: &ThoughtBlock,
    cfg: &LangevinConfig,
    noises: &[Tensor],
    downstream: F,
) -> Result<UnrolledGradient>
where
    E: EnergyFunction + ?Sized,
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    cfg.validate()?;
    if noises.len() != cfg.steps {
        return Err(Error::invalid(format!(
            "{} recorded noises for {} steps",
            noises.len(),
            cfg.steps
        )));
    }
    let mut tape = Tape::new();
    let params = model.params().register(&mut tape, true)?;
    let l0 = tape.leaf(init.tensor().clone())?;
    let mut l = l0;
    for (s, eps) in noises.iter().enumerate() {
        let e = model.build(&mut tape, &params, ctx, l)?;
        let g = tape.grad(e, &[l])?[0];
        let step = tape.scale(g, cfg.eta)?;
        l = tape.sub(l, step)?;
        let kick = tape.constant(eps.scale(cfg.noise_scale()))?;
        l = tape.add(l, kick)?;
        let norm = tape.value(l).max_abs();
        if norm > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                step: s + 1,
                norm,
                eta: cfg.eta,
                steps: cfg.steps,
            });
        }
    }
    let loss = downstream(&mut tape, l)?;
    let initial = tape.gradients(loss, &[l0])?.remove(0);
    let grads = params.gradients(&mut tape, loss)?;
    Ok(UnrolledGradient {
        params: grads,
        initial,
    })
}

/// `<upstream, l>` as a downstream loss, so that the gradient with respect
/// to the final state equals `upstream`.
pub fn linear_readout(upstream: Tensor) -> impl FnOnce(&mut Tape, Var) -> Result<Var> {
    move |tape, l| {
        let u = tape.constant(upstream)?;
        tape.dot(u, l)
    }
}
