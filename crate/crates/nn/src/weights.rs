//! Named parameter collections.
//!
//! Trainable tensors and batch-norm buffers live side by side in insertion
//! order, which is also the serialization order of checkpoints. A batch-norm
//! layer `name` owns `name.scale` and `name.offset` (trainable) and the
//! buffers `name.running_mean`, `name.running_var` and `name.updates`.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{NnError, Result};
use crate::tape::{BatchStats, BnMode, Tape, Var};
use crate::tensor::Tensor4;

/// Running statistics are blended as `m * running + (1 - m) * batch`.
pub const BN_MOMENTUM: f32 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor4,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkWeights {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

/// Trainable parameters placed on a tape, in the order of
/// [`NetworkWeights::trainable`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: HashMap<String, Var>,
    order: Vec<Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.order
    }
}

/// Gradients of the trainable parameters, same order as
/// [`NetworkWeights::trainable`]. `None` marks a parameter that did not
/// influence the loss.
pub type Gradients = Vec<Option<Tensor4>>;

impl NetworkWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, kind: ParamKind, value: Tensor4) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(NnError::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            kind,
            value,
        });
        Ok(())
    }

    /// Kernel drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_kernel<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: [usize; 4],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let value = Tensor4::from_fn(shape, |_| rng.random_range(-bound..bound));
        self.insert(name, ParamKind::Trainable, value)
    }

    pub fn add_bias(&mut self, name: &str, channels: usize) -> Result<()> {
        self.insert(name, ParamKind::Trainable, Tensor4::zeros([1, channels, 1, 1]))
    }

    pub fn add_batch_norm(&mut self, name: &str, channels: usize) -> Result<()> {
        let s = [1, channels, 1, 1];
        self.insert(&format!("{name}.scale"), ParamKind::Trainable, Tensor4::filled(s, 1.0))?;
        self.insert(&format!("{name}.offset"), ParamKind::Trainable, Tensor4::zeros(s))?;
        self.insert(&format!("{name}.running_mean"), ParamKind::Buffer, Tensor4::zeros(s))?;
        self.insert(&format!("{name}.running_var"), ParamKind::Buffer, Tensor4::filled(s, 1.0))?;
        self.insert(&format!("{name}.updates"), ParamKind::Buffer, Tensor4::zeros([1, 1, 1, 1]))
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn get(&self, name: &str) -> Result<&Tensor4> {
        self.index
            .get(name)
            .map(|&i| &self.params[i].value)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn set(&mut self, name: &str, value: Tensor4) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        self.params[i].value.same_shape(&value)?;
        self.params[i].value = value;
        Ok(())
    }

    pub fn trainable(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.kind == ParamKind::Trainable)
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params
            .iter_mut()
            .filter(|p| p.kind == ParamKind::Trainable)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|p| p.value.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Places every trainable parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        let vars: Vec<Var> = self
            .trainable()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect();
        self.bind_vars(vars)
    }

    /// Associates existing tape nodes with the trainable parameters, in
    /// order.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Bound {
        let map = self
            .trainable()
            .zip(&vars)
            .map(|(p, v)| (p.name.clone(), *v))
            .collect();
        Bound { vars: map, order: vars }
    }

    pub fn gradients(&self, tape: &Tape, bound: &Bound) -> Gradients {
        bound.order.iter().map(|v| tape.grad(*v).cloned()).collect()
    }

    /// Eval-mode statistics of batch norm `name`.
    pub fn running_stats(&self, name: &str) -> Result<BnMode<'_>> {
        if self.get(&format!("{name}.updates"))?.as_slice()[0] == 0.0 {
            return Err(NnError::NoRunningStats(name.to_string()));
        }
        Ok(BnMode::Eval {
            mean: self.get(&format!("{name}.running_mean"))?.as_slice(),
            var: self.get(&format!("{name}.running_var"))?.as_slice(),
        })
    }

    /// Blends recorded batch statistics into the running buffers with the
    /// given momentum. The first update copies the batch statistics.
    pub fn update_running_stats(
        &mut self,
        stats: &HashMap<String, BatchStats>,
        momentum: f32,
    ) -> Result<()> {
        let ordered: BTreeMap<_, _> = stats.iter().collect();
        for (name, s) in ordered {
            let count_name = format!("{name}.updates");
            let count = self.get(&count_name)?.as_slice()[0];
            let m = if count == 0.0 { 0.0 } else { momentum };
            for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let key = format!("{name}.{suffix}");
                let mut t = self.get(&key)?.clone();
                if t.len() != batch.len() {
                    return Err(NnError::Shape(format!("statistics for `{key}`")));
                }
                for (r, b) in t.as_mut_slice().iter_mut().zip(batch) {
                    *r = m * *r + (1.0 - m) * b;
                }
                self.set(&key, t)?;
            }
            self.set(&count_name, Tensor4::filled([1, 1, 1, 1], count + 1.0))?;
        }
        Ok(())
    }
}
