//! Trainable part of the pipeline: the projection from assistant width to
//! base width and the energy network.

use rand::Rng;

use crate::energy::{EnergyConfig, EnergyFunction, EnergyModel};
use crate::error::{Error, Result};
use crate::config::Optimizer;
use crate::params::{Adam, Gradients, ParamSet, Sgd};
use crate::tensor::Tensor;

pub const PROJ_WEIGHT: &str = "proj.weight";
pub const PROJ_BIAS: &str = "proj.bias";

/// Linear map `l = h W + b` applied row-wise to assistant states.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    params: ParamSet,
}

impl Projection {
    /// Small random weights; the bias starts at `bias` (the base model's
    /// placeholder embedding) so untrained latents resemble the placeholder.
    pub fn new<R: Rng + ?Sized>(d_in: usize, bias: Tensor, weight_std: f64, rng: &mut R) -> Result<Self> {
        if bias.rank() != 1 {
            return Err(Error::invalid("projection bias must be a vector"));
        }
        let mut params = ParamSet::new();
        params.insert(PROJ_WEIGHT, Tensor::randn(&[d_in, bias.numel()], weight_std, rng));
        params.insert(PROJ_BIAS, bias);
        Ok(Projection { params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn apply(&self, hidden: &Tensor) -> Result<Tensor> {
        let w = self.params.get(PROJ_WEIGHT)?;
        let b = self.params.get(PROJ_BIAS)?;
        let z = hidden.matmul(w)?;
        z.add(&b.broadcast_rows(z.rows()))
    }

    /// Parameter gradients given the input states and `dL/dl`.
    pub fn backward(&self, hidden: &Tensor, upstream: &Tensor) -> Result<Gradients> {
        let mut g = Gradients::default();
        g.0.insert(PROJ_WEIGHT.into(), hidden.transpose()?.matmul(upstream)?);
        g.0.insert(PROJ_BIAS.into(), upstream.sum_rows()?);
        Ok(g)
    }
}

/// Projection plus energy network, saved together as one checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableHead {
    pub projection: Projection,
    pub energy: EnergyModel,
}

impl TrainableHead {
    pub fn new(projection: Projection, energy: EnergyModel) -> Self {
        TrainableHead { projection, energy }
    }

    pub fn to_params(&self) -> Result<ParamSet> {
        let mut all = self.projection.params.clone();
        all.extend(self.energy.clone().into_params())?;
        Ok(all)
    }

    pub fn from_params(energy_cfg: EnergyConfig, d_asst: usize, params: ParamSet) -> Result<Self> {
        let proj = params.subset("proj.");
        let w = proj.get(PROJ_WEIGHT)?;
        let b = proj.get(PROJ_BIAS)?;
        if w.shape() != [d_asst, energy_cfg.latent_dim] || b.shape() != [energy_cfg.latent_dim] || proj.len() != 2 {
            return Err(Error::invalid("projection layout does not match the configuration"));
        }
        let energy = EnergyModel::from_params(energy_cfg, params.subset("energy."))?;
        if proj.len() + energy.params().len() != params.len() {
            return Err(Error::invalid("unexpected entries in head checkpoint"));
        }
        Ok(TrainableHead {
            projection: Projection { params: proj },
            energy,
        })
    }

    /// Applies one update to both parts with gradients keyed like
    /// [`Self::to_params`].
    pub fn apply_update(&mut self, opt: &mut HeadOptimizer, grads: &Gradients) -> Result<()> {
        match opt {
            HeadOptimizer::Sgd(sgd) => {
                sgd.step(&mut self.projection.params, &grads.restrict("proj."))?;
                sgd.step(self.energy.params_mut(), &grads.restrict("energy."))
            }
            HeadOptimizer::Adam { projection, energy } => {
                projection.step(&mut self.projection.params, &grads.restrict("proj."))?;
                energy.step(self.energy.params_mut(), &grads.restrict("energy."))
            }
        }
    }
}

/// Optimizer state for a [`TrainableHead`].
#[derive(Clone, Debug)]
pub enum HeadOptimizer {
    Sgd(Sgd),
    Adam { projection: Adam, energy: Adam },
}

impl HeadOptimizer {
    pub fn new(kind: Optimizer, learning_rate: f64) -> Self {
        match kind {
            Optimizer::Sgd => HeadOptimizer::Sgd(Sgd::new(learning_rate)),
            Optimizer::Adam => HeadOptimizer::Adam {
                projection: Adam::new(learning_rate),
                energy: Adam::new(learning_rate),
            },
        }
    }
}
