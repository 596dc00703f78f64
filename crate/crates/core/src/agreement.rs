//! Three-way agreement of chain gradients on random small energy networks:
//! closed form, reverse mode through the chain, and central differences
//! over the energy parameters with the noise held fixed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{Context, EnergyConfig, EnergyFunction, EnergyModel, ThoughtBlock};
use crate::error::Result;
use crate::gradcheck::{central_difference, rel_error, FD_STEP};
use crate::langevin::{autodiff_unrolled_grad, calibrate, linear_readout, replay, unrolled_param_grad, LangevinConfig};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Closed form against either other route.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-3;
/// Reverse mode against finite differences.
pub const TAPE_FD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub index: u64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub n_thoughts: usize,
    pub steps: usize,
    pub eta: f64,
    pub n_params: usize,
    pub closed_vs_tape: f64,
    pub closed_vs_fd: f64,
    pub tape_vs_fd: f64,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.closed_vs_tape <= CLOSED_FORM_TOLERANCE
            && self.closed_vs_fd <= CLOSED_FORM_TOLERANCE
            && self.tape_vs_fd <= TAPE_FD_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
    pub max_closed_vs_tape: f64,
    pub max_closed_vs_fd: f64,
    pub max_tape_vs_fd: f64,
    pub passed: bool,
}

/// Random case `index`: latent dim 1..=6, one or two hidden layers of
/// width 2..=8, 1..=3 thoughts, S in {1, 2, 3}, noisy chain.
pub fn run_case(seed: u64, index: u64) -> Result<CaseReport> {
    let mut rng = stream_rng(seed, Stream::Init, (1 << 40) + index);
    let latent_dim = rng.gen_range(1..=6);
    let context_dim = rng.gen_range(1..=4);
    let layers = rng.gen_range(1..=2);
    let hidden: Vec<usize> = (0..layers).map(|_| rng.gen_range(2..=8)).collect();
    let n_thoughts = rng.gen_range(1..=3);
    let steps = rng.gen_range(1..=3);
    let eta = rng.gen_range(0.05..0.2);
    let cfg = EnergyConfig {
        context_dim,
        latent_dim,
        position_dim: 2,
        hidden: hidden.clone(),
        max_thoughts: n_thoughts,
        temperature: 1.0,
    };
    let mut model = EnergyModel::new(cfg.clone(), &mut rng)?;
    // Nonzero biases so every term of the network is exercised.
    let names: Vec<String> = model.params().names().cloned().collect();
    for name in &names {
        if name.ends_with("bias") {
            let shape = model.params().get(name)?.shape().to_vec();
            *model.params_mut().get_mut(name)? = Tensor::randn(&shape, 0.3, &mut rng);
        }
    }
    let ctx = Context::from_pooled(Tensor::randn(&[context_dim], 1.0, &mut rng));
    let init = ThoughtBlock::new(Tensor::randn(&[n_thoughts, latent_dim], 1.0, &mut rng))?;
    let langevin = LangevinConfig::new(eta, steps, true);
    let trajectory = calibrate(&model, &ctx, &init, &langevin, &mut rng)?;
    let upstream = Tensor::randn(&[n_thoughts, latent_dim], 1.0, &mut rng);

    let closed = unrolled_param_grad(&model, &trajectory, &upstream)?.params.flatten();
    let tape = autodiff_unrolled_grad(
        &model,
        &ctx,
        &init,
        &langevin,
        trajectory.noises(),
        linear_readout(upstream.clone()),
    )?
    .params
    .flatten();
    let flat = model.params().flatten();
    let mut probe = model.clone();
    let fd = central_difference(
        |x| {
            probe.params_mut().assign_flat(x)?;
            let t = replay(&probe, &ctx, &init, &langevin, trajectory.noises())?;
            t.last().tensor().dot(&upstream)
        },
        &flat,
        FD_STEP,
    )?;
    Ok(CaseReport {
        index,
        latent_dim,
        hidden,
        n_thoughts,
        steps,
        eta,
        n_params: flat.len(),
        closed_vs_tape: rel_error(&closed, &tape),
        closed_vs_fd: rel_error(&closed, &fd),
        tape_vs_fd: rel_error(&tape, &fd),
    })
}

/// Runs `n` random cases.
pub fn run_suite(seed: u64, n: usize) -> Result<SuiteReport> {
    let cases = (0..n as u64).map(|i| run_case(seed, i)).collect::<Result<Vec<_>>>()?;
    let max = |f: fn(&CaseReport) -> f64| cases.iter().map(f).fold(0.0, f64::max);
    Ok(SuiteReport {
        max_closed_vs_tape: max(|c| c.closed_vs_tape),
        max_closed_vs_fd: max(|c| c.closed_vs_fd),
        max_tape_vs_fd: max(|c| c.tape_vs_fd),
        passed: cases.iter().all(CaseReport::passed),
        cases,
    })
}
