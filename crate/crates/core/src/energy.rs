//! Energy functions over latent thought blocks.
//!
//! [`EnergyModel`] scores a block `L = [l_1; ...; l_n]` given a question
//! context as `sum_i mlp([pooled_question; l_i; pos_i])` with tanh hidden
//! layers. The [`EnergyFunction`] trait supplies value, latent gradient,
//! parameter gradient and the mixed vector-Jacobian product from a single
//! tape construction, so any energy that can be written on the tape gets
//! all four for free.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamSet, ParamVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Latent thought embeddings, one row per thought.
#[derive(Clone, Debug, PartialEq)]
pub struct ThoughtBlock(Tensor);

impl ThoughtBlock {
    pub fn new(latents: Tensor) -> Result<Self> {
        if latents.rank() != 2 {
            return Err(Error::invalid(format!(
                "thought block must be [n_thoughts, dim], got {:?}",
                latents.shape()
            )));
        }
        if !latents.is_finite() {
            return Err(Error::NonFinite {
                op: "thought block".into(),
            });
        }
        Ok(ThoughtBlock(latents))
    }

    pub fn n_thoughts(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// The conditioning information seen by the energy.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pooled_question: Tensor,
    question_embeddings: Option<Tensor>,
}

impl Context {
    /// Pools `[q, d]` question token embeddings by their arithmetic mean.
    pub fn from_question_embeddings(embeddings: Tensor) -> Result<Self> {
        if embeddings.rank() != 2 {
            return Err(Error::invalid("question embeddings must be [q, d]"));
        }
        let q = embeddings.rows() as f64;
        let pooled = embeddings.sum_rows()?.scale(1.0 / q);
        Ok(Context {
            pooled_question: pooled,
            question_embeddings: Some(embeddings),
        })
    }

    pub fn from_pooled(pooled: Tensor) -> Self {
        let d = pooled.numel();
        Context {
            pooled_question: pooled.reshape(&[d]).expect("numel preserved"),
            question_embeddings: None,
        }
    }

    /// Context for energies that ignore conditioning.
    pub fn empty() -> Self {
        Context::from_pooled(Tensor::zeros(&[1]))
    }

    pub fn pooled(&self) -> &Tensor {
        &self.pooled_question
    }

    pub fn question_embeddings(&self) -> Option<&Tensor> {
        self.question_embeddings.as_ref()
    }
}

/// A parameterised scalar energy `E_phi(ctx, L)`.
pub trait EnergyFunction {
    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Records `E_phi(ctx, block)` on `tape` and returns the scalar node.
    fn build(&self, tape: &mut Tape, params: &ParamVars, ctx: &Context, block: Var) -> Result<Var>;

    fn energy(&self, ctx: &Context, block: &ThoughtBlock) -> Result<f64> {
        let mut tape = Tape::new();
        let params = self.params().register(&mut tape, false)?;
        let l = tape.constant(block.tensor().clone())?;
        let e = self.build(&mut tape, &params, ctx, l)?;
        tape.value(e).item()
    }

    /// `nabla_l E_phi(ctx, block)`, same shape as the block.
    fn grad_latent(&self, ctx: &Context, block: &ThoughtBlock) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.params().register(&mut tape, false)?;
        let l = tape.leaf(block.tensor().clone())?;
        let e = self.build(&mut tape, &params, ctx, l)?;
        Ok(tape.gradients(e, &[l])?.remove(0))
    }

    /// `d E_phi / d phi` for every parameter entry.
    fn grad_params(&self, ctx: &Context, block: &ThoughtBlock) -> Result<Gradients> {
        let mut tape = Tape::new();
        let params = self.params().register(&mut tape, true)?;
        let l = tape.constant(block.tensor().clone())?;
        let e = self.build(&mut tape, &params, ctx, l)?;
        params.gradients(&mut tape, e)
    }

    /// `u . d(nabla_l E)/d phi`, obtained by differentiating
    /// `<u, nabla_l E>` with respect to the parameters.
    fn grad_latent_vjp(&self, ctx: &Context, block: &ThoughtBlock, u: &Tensor) -> Result<Gradients> {
        if u.shape() != block.tensor().shape() {
            return Err(Error::ShapeMismatch {
                op: "grad_latent_vjp",
                left: block.tensor().shape().to_vec(),
                right: u.shape().to_vec(),
            });
        }
        let mut tape = Tape::new();
        let params = self.params().register(&mut tape, true)?;
        let l = tape.leaf(block.tensor().clone())?;
        let e = self.build(&mut tape, &params, ctx, l)?;
        let g = tape.grad(e, &[l])?[0];
        let uv = tape.constant(u.clone())?;
        let inner = tape.dot(g, uv)?;
        params.gradients(&mut tape, inner)
    }
}

/// Hyperparameters of [`EnergyModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub context_dim: usize,
    pub latent_dim: usize,
    pub position_dim: usize,
    pub hidden: Vec<usize>,
    pub max_thoughts: usize,
    pub temperature: f64,
}

impl EnergyConfig {
    pub fn new(context_dim: usize, latent_dim: usize, max_thoughts: usize) -> Self {
        EnergyConfig {
            context_dim,
            latent_dim,
            position_dim: 8,
            hidden: vec![64, 32],
            max_thoughts,
            temperature: 1.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.context_dim + self.latent_dim + self.position_dim
    }

    /// Parameter names and shapes in lexicographic order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![(POS_EMB.to_string(), vec![self.max_thoughts, self.position_dim])];
        let mut fan_in = self.input_dim();
        for (i, &h) in self.hidden.iter().enumerate() {
            let (w, b) = layer_names(i);
            out.push((w, vec![fan_in, h]));
            out.push((b, vec![h]));
            fan_in = h;
        }
        out.push((OUT_WEIGHT.to_string(), vec![fan_in, 1]));
        out.push((OUT_BIAS.to_string(), vec![1]));
        out.sort();
        out
    }

    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("energy temperature must be positive"));
        }
        if self.context_dim == 0 || self.latent_dim == 0 || self.position_dim == 0 || self.max_thoughts == 0 {
            return Err(Error::invalid("energy dimensions must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

pub const POS_EMB: &str = "energy.pos_emb";
pub const OUT_WEIGHT: &str = "energy.out.weight";
pub const OUT_BIAS: &str = "energy.out.bias";

fn layer_names(i: usize) -> (String, String) {
    (format!("energy.layer{i}.weight"), format!("energy.layer{i}.bias"))
}

/// Per-token tanh MLP energy summed over the block.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    config: EnergyConfig,
    params: ParamSet,
}

impl EnergyModel {
    /// Random initialisation with `1/sqrt(fan_in)` scaled weights.
    pub fn new<R: Rng + ?Sized>(config: EnergyConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        params.insert(
            POS_EMB,
            Tensor::randn(&[config.max_thoughts, config.position_dim], 0.1, rng),
        );
        let mut fan_in = config.input_dim();
        for (i, &h) in config.hidden.iter().enumerate() {
            let (w, b) = layer_names(i);
            params.insert(w, Tensor::randn(&[fan_in, h], 1.0 / (fan_in as f64).sqrt(), rng));
            params.insert(b, Tensor::zeros(&[h]));
            fan_in = h;
        }
        params.insert(
            OUT_WEIGHT,
            Tensor::randn(&[fan_in, 1], 1.0 / (fan_in as f64).sqrt(), rng),
        );
        params.insert(OUT_BIAS, Tensor::zeros(&[1]));
        Ok(EnergyModel { config, params })
    }

    /// Wraps existing parameters after checking their layout.
    pub fn from_params(config: EnergyConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let expected = config.layout();
        let actual: Vec<(String, Vec<usize>)> = params
            .iter()
            .map(|(k, e)| (k.clone(), e.value.shape().to_vec()))
            .collect();
        if expected != actual {
            return Err(Error::invalid(format!(
                "energy parameter layout mismatch: expected {expected:?}, got {actual:?}"
            )));
        }
        Ok(EnergyModel { config, params })
    }

    pub fn config(&self) -> &EnergyConfig {
        &self.config
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn temperature(&self) -> f64 {
        self.config.temperature
    }

    fn check_block(&self, ctx: &Context, block_shape: &[usize]) -> Result<()> {
        if ctx.pooled().numel() != self.config.context_dim {
            return Err(Error::ShapeMismatch {
                op: "energy context",
                left: vec![self.config.context_dim],
                right: ctx.pooled().shape().to_vec(),
            });
        }
        if block_shape.len() != 2 || block_shape[1] != self.config.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "energy block",
                left: vec![block_shape.first().copied().unwrap_or(0), self.config.latent_dim],
                right: block_shape.to_vec(),
            });
        }
        if block_shape[0] > self.config.max_thoughts {
            return Err(Error::invalid(format!(
                "{} thoughts exceed max_thoughts {}",
                block_shape[0], self.config.max_thoughts
            )));
        }
        Ok(())
    }

    /// Builds the energy with explicit position indices for each row.
    pub fn build_at(
        &self,
        tape: &mut Tape,
        params: &ParamVars,
        ctx: &Context,
        block: Var,
        positions: &[usize],
    ) -> Result<Var> {
        let shape = tape.shape(block).to_vec();
        self.check_block(ctx, &shape)?;
        let n = shape[0];
        if positions.len() != n || positions.iter().any(|&p| p >= self.config.max_thoughts) {
            return Err(Error::invalid("position indices do not match the block"));
        }
        let pooled = tape.constant(ctx.pooled().clone())?;
        let ctx_rows = tape.broadcast_rows(pooled, n)?;
        let pos = tape.gather(params.get(POS_EMB)?, positions)?;
        let mut h = tape.concat(&[ctx_rows, block, pos], 1)?;
        for i in 0..self.config.hidden.len() {
            let (w, b) = layer_names(i);
            let z = tape.matmul(h, params.get(&w)?)?;
            let z = tape.add_row(z, params.get(&b)?)?;
            h = tape.tanh(z)?;
        }
        let out = tape.matmul(h, params.get(OUT_WEIGHT)?)?;
        let out = tape.add_row(out, params.get(OUT_BIAS)?)?;
        tape.sum(out)
    }

    /// Energy with rows assigned to the given position indices.
    pub fn energy_at(&self, ctx: &Context, block: &ThoughtBlock, positions: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let params = self.params.register(&mut tape, false)?;
        let l = tape.constant(block.tensor().clone())?;
        let e = self.build_at(&mut tape, &params, ctx, l, positions)?;
        tape.value(e).item()
    }
}

impl EnergyFunction for EnergyModel {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn build(&self, tape: &mut Tape, params: &ParamVars, ctx: &Context, block: Var) -> Result<Var> {
        let n = tape.shape(block).first().copied().unwrap_or(0);
        let positions: Vec<usize> = (0..n).collect();
        self.build_at(tape, params, ctx, block, &positions)
    }
}

/// `E(l) = 0.5 * theta * |l|^2`, a closed-form reference energy.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticEnergy {
    params: ParamSet,
}

impl QuadraticEnergy {
    pub const THETA: &'static str = "theta";

    pub fn new(theta: f64) -> Self {
        let mut params = ParamSet::new();
        params.insert(Self::THETA, Tensor::vector(vec![theta]));
        QuadraticEnergy { params }
    }

    pub fn theta(&self) -> f64 {
        self.params.get(Self::THETA).map(|t| t.data()[0]).unwrap_or(f64::NAN)
    }
}

impl EnergyFunction for QuadraticEnergy {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn build(&self, tape: &mut Tape, params: &ParamVars, _ctx: &Context, block: Var) -> Result<Var> {
        let theta = tape.reshape(params.get(Self::THETA)?, &[])?;
        let n = tape.sq_norm(block)?;
        let e = tape.mul(theta, n)?;
        tape.scale(e, 0.5)
    }
}

/// Residual reweighting `p_i exp(-E_i / T) / Z` of a base distribution.
pub fn residual_reweight(base_probs: &[f64], energies: &[f64], temperature: f64) -> Result<Vec<f64>> {
    validate_reweight(base_probs, energies, temperature)?;
    let logw: Vec<f64> = base_probs
        .iter()
        .zip(energies)
        .map(|(&p, &e)| if p > 0.0 { p.ln() - e / temperature } else { f64::NEG_INFINITY })
        .collect();
    let max = logw.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !max.is_finite() {
        return Err(Error::NumericCheck("partition function underflowed to 0".into()));
    }
    let w: Vec<f64> = logw.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = w.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::NumericCheck("partition function underflowed to 0".into()));
    }
    Ok(w.into_iter().map(|v| v / z).collect())
}

/// `Z = sum_j p_j exp(-E_j / T)` without rescaling; rejected when it underflows.
pub fn partition_function(base_probs: &[f64], energies: &[f64], temperature: f64) -> Result<f64> {
    validate_reweight(base_probs, energies, temperature)?;
    let z: f64 = base_probs
        .iter()
        .zip(energies)
        .map(|(&p, &e)| p * (-e / temperature).exp())
        .sum();
    if z == 0.0 {
        return Err(Error::NumericCheck("partition function underflowed to 0".into()));
    }
    if !z.is_finite() {
        return Err(Error::NonFinite {
            op: "partition_function".into(),
        });
    }
    Ok(z)
}

fn validate_reweight(base_probs: &[f64], energies: &[f64], temperature: f64) -> Result<()> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if base_probs.len() != energies.len() {
        return Err(Error::ShapeMismatch {
            op: "residual_reweight",
            left: vec![base_probs.len()],
            right: vec![energies.len()],
        });
    }
    if base_probs.is_empty() {
        return Err(Error::Empty("residual_reweight"));
    }
    if base_probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid("base probabilities must be finite and nonnegative"));
    }
    let s: f64 = base_probs.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("base probabilities sum to {s}")));
    }
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite {
            op: "residual_reweight energies".into(),
        });
    }
    Ok(())
}

/// Token energies of a softmax head: `E_v = -logit_v`.
pub fn logits_to_energies(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "logits_to_energies".into(),
        });
    }
    Ok(logits.iter().map(|v| -v).collect())
}
