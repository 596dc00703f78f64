//! Named parameter collections, gradients, optimizers and checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub frozen: bool,
}

/// Named tensors. Iteration (and therefore flattening) is lexicographic by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(
            name.into(),
            ParamEntry {
                value,
                frozen: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.frozen)
    }

    pub fn freeze_all(&mut self) {
        for e in self.entries.values_mut() {
            e.frozen = true;
        }
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.frozen = frozen)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.value.numel()).sum()
    }

    /// Concatenated entries in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .values()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(Error::invalid(format!(
                "flat vector length {} != parameter count {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut offset = 0;
        for e in self.entries.values_mut() {
            let n = e.value.numel();
            e.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Merges another set in; names must not collide.
    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for (k, v) in other.entries {
            if self.entries.contains_key(&k) {
                return Err(Error::invalid(format!("duplicate parameter {k:?}")));
            }
            self.entries.insert(k, v);
        }
        Ok(())
    }

    /// Entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Puts every entry on the tape. With `differentiable = false` the
    /// entries become constants, which skips their adjoint work.
    pub fn register(&self, tape: &mut Tape, differentiable: bool) -> Result<ParamVars> {
        let mut vars = BTreeMap::new();
        for (name, e) in &self.entries {
            let v = if differentiable {
                tape.leaf(e.value.clone())?
            } else {
                tape.constant(e.value.clone())?
            };
            vars.insert(name.clone(), v);
        }
        Ok(ParamVars(vars))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = CheckpointDoc {
            entries: self
                .entries
                .iter()
                .map(|(name, e)| {
                    if !e.value.is_finite() {
                        return Err(Error::NonFinite {
                            op: format!("serialize {name}"),
                        });
                    }
                    Ok(CheckpointEntry {
                        name: name.clone(),
                        shape: e.value.shape().to_vec(),
                        frozen: e.frozen,
                        data: e.value.data().to_vec(),
                    })
                })
                .collect::<Result<_>>()?,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(text)?;
        let mut entries = BTreeMap::new();
        for e in doc.entries {
            let value = Tensor::new(e.shape, e.data)?;
            if entries
                .insert(
                    e.name.clone(),
                    ParamEntry {
                        value,
                        frozen: e.frozen,
                    },
                )
                .is_some()
            {
                return Err(Error::invalid(format!("duplicate entry {:?}", e.name)));
            }
        }
        Ok(ParamSet { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    /// Verifies names and shapes match `other`.
    pub fn check_layout(&self, other: &ParamSet) -> Result<()> {
        let a: Vec<_> = self.iter().map(|(k, e)| (k, e.value.shape())).collect();
        let b: Vec<_> = other.iter().map(|(k, e)| (k, e.value.shape())).collect();
        if a != b {
            return Err(Error::invalid(format!(
                "parameter layout mismatch: {:?} vs {:?}",
                a.iter().map(|(k, _)| k).collect::<Vec<_>>(),
                b.iter().map(|(k, _)| k).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    entries: Vec<CheckpointEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
    data: Vec<f64>,
}

/// Tape handles for a registered [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct ParamVars(BTreeMap<String, Var>);

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("parameter {name:?} not registered")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.0.iter()
    }

    /// Reverse-mode gradient of `loss` for every registered entry.
    pub fn gradients(&self, tape: &mut Tape, loss: Var) -> Result<Gradients> {
        let names: Vec<String> = self.0.keys().cloned().collect();
        let vars: Vec<Var> = self.0.values().copied().collect();
        let grads = tape.gradients(loss, &vars)?;
        Ok(Gradients(names.into_iter().zip(grads).collect()))
    }
}

/// Named gradient tensors, keyed like the [`ParamSet`] they belong to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients(pub BTreeMap<String, Tensor>);

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients(
            params
                .iter()
                .map(|(k, e)| (k.clone(), Tensor::zeros(e.value.shape())))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    /// `self += c * other`, inserting missing names.
    pub fn add_scaled(&mut self, c: f64, other: &Gradients) -> Result<()> {
        for (k, g) in &other.0 {
            match self.0.get_mut(k) {
                Some(t) => t.axpy(c, g)?,
                None => {
                    self.0.insert(k.clone(), g.scale(c));
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.0.values_mut() {
            *t = t.scale(c);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.values().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn restrict(&self, prefix: &str) -> Gradients {
        Gradients(
            self.0
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(Tensor::is_finite)
    }
}

/// Plain stochastic gradient descent. Frozen entries are never touched.
#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Sgd {
    pub fn new(learning_rate: f64) -> Self {
        Sgd { learning_rate }
    }

    pub fn step(&self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        for (name, entry) in params.entries.iter_mut() {
            if entry.frozen {
                continue;
            }
            if let Some(g) = grads.0.get(name) {
                entry.value.axpy(-self.learning_rate, g)?;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction; used only to pretrain the frozen toy models.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (name, entry) in params.entries.iter_mut() {
            if entry.frozen {
                continue;
            }
            let Some(g) = grads.0.get(name) else { continue };
            let shape = entry.value.shape().to_vec();
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
            for (((p, &gi), mi), vi) in entry
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *p -= self.learning_rate * (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
