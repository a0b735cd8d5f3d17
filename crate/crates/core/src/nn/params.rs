use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Weight,
    Bias,
    BnGamma,
    BnBeta,
}

impl ParamRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::BnGamma => "bn_gamma",
            ParamRole::BnBeta => "bn_beta",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "weight" => ParamRole::Weight,
            "bias" => ParamRole::Bias,
            "bn_gamma" => ParamRole::BnGamma,
            "bn_beta" => ParamRole::BnBeta,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub velocity: Tensor4<T>,
    pub role: ParamRole,
    /// Whether the L2 penalty applies.
    pub decay: bool,
}

/// Batch-norm running statistics. `var` is the unbiased estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub updates: u64,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            updates: 0,
        }
    }

    /// Statistics usable for inference without any training update.
    pub fn fixed(mean: Vec<T>, var: Vec<T>) -> Self {
        RunningStats {
            mean,
            var,
            updates: 1,
        }
    }
}

/// Named learnable tensors with their gradients and optimizer state, plus
/// the running statistics of every batch-norm node. Iteration order is
/// insertion order.
#[derive(Debug, Clone)]
pub struct ParamStore<T = f32> {
    params: IndexMap<String, ParamEntry<T>>,
    running: IndexMap<String, RunningStats<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
            running: IndexMap::new(),
        }
    }

    /// Adds a parameter with zero gradient and velocity. Weights are decayed,
    /// biases and batch-norm parameters are not.
    pub fn insert(&mut self, name: &str, value: Tensor4<T>, role: ParamRole) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Graph(format!("duplicate parameter `{name}`")));
        }
        let s = value.shape();
        self.params.insert(
            name.to_string(),
            ParamEntry {
                grad: Tensor4::zeros(s),
                velocity: Tensor4::zeros(s),
                value,
                role,
                decay: role == ParamRole::Weight,
            },
        );
        Ok(())
    }

    pub fn insert_running(&mut self, node: &str, stats: RunningStats<T>) {
        self.running.insert(node.to_string(), stats);
    }

    /// Applies the L2 penalty to every parameter, or to weights only.
    pub fn set_decay_all(&mut self, all: bool) {
        for e in self.params.values_mut() {
            e.decay = all || e.role == ParamRole::Weight;
        }
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor4<T>> {
        self.params
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::Graph(format!("parameter `{name}` is not in the store")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor4<T>> {
        self.params
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::Graph(format!("parameter `{name}` is not in the store")))
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[T]) -> Result<()> {
        let e = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Graph(format!("parameter `{name}` is not in the store")))?;
        if e.grad.data().len() != grad.len() {
            return Err(Error::Shape(format!(
                "gradient for `{name}` has {} values, parameter has {}",
                grad.len(),
                e.grad.data().len()
            )));
        }
        for (g, &d) in e.grad.data_mut().iter_mut().zip(grad) {
            *g = *g + d;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for e in self.params.values_mut() {
            e.grad.data_mut().fill(T::zero());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|e| e.value.shape().len()).sum()
    }

    pub fn running(&self, node: &str) -> Option<&RunningStats<T>> {
        self.running.get(node)
    }

    pub fn running_mut(&mut self, node: &str) -> Option<&mut RunningStats<T>> {
        self.running.get_mut(node)
    }

    pub fn running_iter(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.running.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Folds one batch's statistics into the running estimate:
    /// `r <- m * r + (1 - m) * batch`, with the variance made unbiased over
    /// `count` samples per channel.
    pub fn update_running(
        &mut self,
        node: &str,
        mean: &[f64],
        biased_var: &[f64],
        count: usize,
        momentum: f64,
    ) -> Result<()> {
        let stats = self
            .running
            .get_mut(node)
            .ok_or_else(|| Error::Graph(format!("no running statistics for `{node}`")))?;
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        for (c, (m, v)) in stats.mean.iter_mut().zip(stats.var.iter_mut()).enumerate() {
            *m = T::of_f64(momentum * m.as_f64() + (1.0 - momentum) * mean[c]);
            *v = T::of_f64(momentum * v.as_f64() + (1.0 - momentum) * biased_var[c] * unbias);
        }
        stats.updates += 1;
        Ok(())
    }

    /// Converts values, gradients, velocities and statistics to another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of_f64(x.as_f64())).collect::<Vec<U>>();
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            value: e.value.cast(),
                            grad: e.grad.cast(),
                            velocity: e.velocity.cast(),
                            role: e.role,
                            decay: e.decay,
                        },
                    )
                })
                .collect(),
            running: self
                .running
                .iter()
                .map(|(k, r)| {
                    (
                        k.clone(),
                        RunningStats {
                            mean: conv(&r.mean),
                            var: conv(&r.var),
                            updates: r.updates,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Shapes of all parameters, in order.
    pub fn shapes(&self) -> Vec<(String, Shape4)> {
        self.params
            .iter()
            .map(|(k, e)| (k.clone(), e.value.shape()))
            .collect()
    }
}
