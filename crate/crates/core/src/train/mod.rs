//! Stochastic gradient descent with momentum, L2 penalty and exponential
//! learning-rate decay, on randomly sampled and augmented patches.

mod augment;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    backward, forward, init_params, softmax_cross_entropy, update_running_stats, ArchGraph, Mode,
    ParamStore,
};
use crate::tensor::Scalar;

pub use augment::{assemble, augment, sample_batch, AugmentedPatch, D4};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// Iterations over which the learning rate falls by a factor of ten.
    pub decay_period: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Decay biases and batch-norm parameters too.
    pub decay_all: bool,
    pub batch_size: usize,
    pub patch_size: usize,
    pub max_iters: u64,
    pub seed: u64,
    pub finetune_lr: f64,
    /// Checkpoint period in iterations; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.1,
            decay_period: 10_000,
            momentum: 0.9,
            weight_decay: 0.0005,
            decay_all: false,
            batch_size: 5,
            patch_size: 256,
            max_iters: 10_000,
            seed: 0,
            finetune_lr: 0.01,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.patch_size == 0 || self.patch_size % 32 != 0 {
            return bad("patch_size must be a positive multiple of 32");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.decay_period == 0 {
            return bad("decay_period must be positive");
        }
        if !(self.base_lr > 0.0 && self.finetune_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight_decay be non-negative");
        }
        Ok(())
    }
}

/// `base_lr * 10^(-iter / decay_period)`.
pub fn lr_at(iter: u64, config: &TrainConfig) -> f64 {
    config.base_lr / 10f64.powf(iter as f64 / config.decay_period as f64)
}

/// One momentum step on every parameter, then clears the gradients:
/// `g = grad + wd * w` (where decayed), `v = m * v - lr * g`, `w += v`.
pub fn sgd_update<T: Scalar>(params: &mut ParamStore<T>, lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, m, wd) = (T::of_f64(lr), T::of_f64(momentum), T::of_f64(weight_decay));
    for (_, e) in params.iter_mut() {
        let decay = e.decay;
        let w = e.value.data_mut();
        let v = e.velocity.data_mut();
        for ((w, v), g) in w.iter_mut().zip(v.iter_mut()).zip(e.grad.data()) {
            let g = if decay { *g + wd * *w } else { *g };
            *v = m * *v - lr * g;
            *w = *w + *v;
        }
    }
    params.zero_grad();
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: u64,
    pub lr: f64,
    pub loss: f64,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iter,lr,loss\n");
    for r in trace {
        s.push_str(&format!("{},{:e},{:e}\n", r.iter, r.lr, r.loss));
    }
    s
}

/// The random stream for iteration `iter`: restarting at any iteration
/// draws the same batches as an uninterrupted run.
pub fn iteration_rng(seed: u64, iter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter);
    rng
}

/// Runs iterations `start..config.max_iters` at learning rate
/// `lr_at(iter)` scaled to `base_lr`. `on_checkpoint(done, params)` is
/// called after every `checkpoint_every` completed iterations and after
/// the last one.
pub fn train(
    graph: &ArchGraph,
    params: &mut ParamStore<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    start: u64,
    mut on_checkpoint: impl FnMut(u64, &ParamStore<f32>) -> Result<()>,
) -> Result<Vec<TraceRow>> {
    config.validate()?;
    if dataset.n_classes != graph.n_classes() {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, network predicts {}",
            dataset.n_classes,
            graph.n_classes()
        )));
    }
    let mut trace = Vec::with_capacity(config.max_iters.saturating_sub(start) as usize);
    for iter in start..config.max_iters {
        let mut rng = iteration_rng(config.seed, iter);
        let batch = sample_batch(dataset, config.patch_size, config.batch_size, &mut rng)?;
        let (x, targets, ignore) = assemble(&batch, dataset.n_classes)?;
        let acts = forward(graph, params, &x, Mode::Train)?;
        let l = softmax_cross_entropy(acts.output(), &targets, Some(&ignore))?;
        if !l.loss.is_finite() {
            return Err(Error::NonFiniteLoss { iter });
        }
        backward(graph, params, &acts, &l.grad)?;
        update_running_stats(graph, params, &acts)?;
        let lr = lr_at(iter, config);
        sgd_update(params, lr, config.momentum, config.weight_decay);
        trace.push(TraceRow { iter, lr, loss: l.loss });
        let done = iter + 1;
        if done == config.max_iters || (config.checkpoint_every > 0 && done % config.checkpoint_every == 0) {
            on_checkpoint(done, params)?;
        }
    }
    Ok(trace)
}

/// Fresh parameters for `graph` with every trunk parameter, and any other
/// parameter of the same name and shape, copied from `pretrained` along with
/// its batch-norm statistics. Optimizer state starts at zero.
pub fn warm_start(graph: &ArchGraph, pretrained: &ParamStore<f32>, seed: u64) -> Result<ParamStore<f32>> {
    let missing: Vec<String> = graph
        .params()
        .iter()
        .filter(|d| {
            d.trunk
                && pretrained
                    .get(&d.name)
                    .is_none_or(|e| e.value.shape() != d.shape)
        })
        .map(|d| d.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingParams(missing));
    }
    let mut params = init_params::<f32>(graph, seed)?;
    for (name, e) in params.iter_mut() {
        if let Some(src) = pretrained.get(name) {
            if src.value.shape() == e.value.shape() {
                e.value = src.value.clone();
            }
        }
    }
    let nodes: Vec<String> = params.running_iter().map(|(n, _)| n.to_string()).collect();
    for node in nodes {
        if let Some(stats) = pretrained.running(&node) {
            if stats.mean.len() == params.running(&node).map_or(0, |s| s.mean.len()) {
                params.insert_running(&node, stats.clone());
            }
        }
    }
    Ok(params)
}

/// Warm-starts `graph` from `pretrained` and trains it with `base_lr`
/// replaced by `finetune_lr`.
pub fn finetune(
    graph: &ArchGraph,
    pretrained: &ParamStore<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    on_checkpoint: impl FnMut(u64, &ParamStore<f32>) -> Result<()>,
) -> Result<(ParamStore<f32>, Vec<TraceRow>)> {
    let mut params = warm_start(graph, pretrained, config.seed)?;
    params.set_decay_all(config.decay_all);
    let config = TrainConfig {
        base_lr: config.finetune_lr,
        ..config.clone()
    };
    let trace = train(graph, &mut params, dataset, &config, 0, on_checkpoint)?;
    Ok((params, trace))
}
