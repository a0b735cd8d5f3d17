//! Forward and reverse-mode evaluation of an [`ArchGraph`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::nn::activation::{relu_backward, relu_forward};
use crate::nn::batchnorm::{
    batchnorm_backward, batchnorm_infer, batchnorm_infer_backward, batchnorm_train, BnCache,
    BN_EPS, BN_MOMENTUM,
};
use crate::nn::graph::{ArchGraph, LayerKind, NodeId};
use crate::nn::params::ParamStore;
use crate::ops::{
    avg_pool2d, avg_pool2d_backward, concat_channels, conv2d, conv2d_backward,
    dilated_maxpool2d, dilated_maxpool2d_backward, max_unpool2d, max_unpool2d_backward,
    maxpool2d, maxpool2d_backward, pool_gather, split_channels, transposed_conv2d,
    transposed_conv2d_backward, upsample_bilinear, upsample_bilinear_backward, PoolIndices,
};
use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    None,
    Pool(PoolIndices),
    Bn(BnCache<T>),
}

/// Every node's output plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct Activations<T> {
    outputs: Vec<Option<Tensor4<T>>>,
    caches: Vec<Cache<T>>,
    output: NodeId,
    mode: Mode,
}

impl<T: Scalar> Activations<T> {
    pub fn output(&self) -> &Tensor4<T> {
        self.outputs[self.output].as_ref().expect("output is always retained")
    }

    pub fn into_output(mut self) -> Tensor4<T> {
        self.outputs[self.output].take().expect("output is always retained")
    }

    /// Output of node `id`; `None` if it was released early during inference.
    pub fn node(&self, id: NodeId) -> Option<&Tensor4<T>> {
        self.outputs[id].as_ref()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Hash of every ReLU's active set and every pool's argmax choice: two
    /// passes with equal signatures evaluate the same piecewise-smooth branch.
    pub fn kink_signature(&self, graph: &ArchGraph) -> u64 {
        let mut h = DefaultHasher::new();
        for &id in graph.order() {
            if graph.node(id).kind == LayerKind::Relu {
                if let Some(y) = &self.outputs[id] {
                    for chunk in y.data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |b, (i, v)| b | (u64::from(*v > T::zero()) << i));
                        h.write_u64(bits);
                    }
                }
            }
            if let Cache::Pool(p) = &self.caches[id] {
                p.offsets().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Pool argmax records, in evaluation order.
    pub fn pool_indices(&self) -> impl Iterator<Item = &PoolIndices> {
        self.caches.iter().filter_map(|c| match c {
            Cache::Pool(p) => Some(p),
            _ => None,
        })
    }
}

fn bn_params<'a, T: Scalar>(
    graph: &ArchGraph,
    params: &'a ParamStore<T>,
    id: NodeId,
) -> Result<(&'a [T], &'a [T])> {
    let n = graph.node(id);
    Ok((
        params.value(&n.params[0])?.data(),
        params.value(&n.params[1])?.data(),
    ))
}

fn bias<'a, T: Scalar>(
    params: &'a ParamStore<T>,
    names: &[String],
    has_bias: bool,
) -> Result<Option<&'a [T]>> {
    Ok(if has_bias {
        Some(params.value(&names[1])?.data())
    } else {
        None
    })
}

/// Evaluates the whole graph, keeping every intermediate output.
pub fn forward<T: Scalar>(
    graph: &ArchGraph,
    params: &ParamStore<T>,
    input: &Tensor4<T>,
    mode: Mode,
) -> Result<Activations<T>> {
    run(graph, params, input, mode, true, None)
}

/// Like [`forward`], but every ReLU keeps the active set and every max pool
/// the argmax choices of `reference`. Near the reference point this is the
/// same function, and it is smooth in all parameters and the input.
pub fn forward_frozen<T: Scalar>(
    graph: &ArchGraph,
    params: &ParamStore<T>,
    input: &Tensor4<T>,
    mode: Mode,
    reference: &Activations<T>,
) -> Result<Activations<T>> {
    run(graph, params, input, mode, true, Some(reference))
}

/// Inference-mode evaluation that releases intermediate outputs as soon as
/// their last consumer has run; returns the network output.
pub fn predict<T: Scalar>(
    graph: &ArchGraph,
    params: &ParamStore<T>,
    input: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    Ok(run(graph, params, input, Mode::Infer, false, None)?.into_output())
}

fn run<T: Scalar>(
    graph: &ArchGraph,
    params: &ParamStore<T>,
    input: &Tensor4<T>,
    mode: Mode,
    retain: bool,
    frozen: Option<&Activations<T>>,
) -> Result<Activations<T>> {
    graph.infer_shapes(input.shape())?;
    let count = graph.nodes().len();
    let mut outputs: Vec<Option<Tensor4<T>>> = vec![None; count];
    let mut caches: Vec<Cache<T>> = vec![Cache::None; count];
    // Position in evaluation order after which a node's output is dead.
    let mut last_use = vec![0usize; count];
    for (pos, &id) in graph.order().iter().enumerate() {
        for &i in &graph.node(id).inputs {
            last_use[i] = pos;
        }
    }
    for (pos, &id) in graph.order().iter().enumerate() {
        let node = graph.node(id);
        let x = |k: usize| -> &Tensor4<T> {
            outputs[node.inputs[k]]
                .as_ref()
                .expect("inputs are evaluated first")
        };
        let y = match &node.kind {
            LayerKind::Input => input.clone(),
            LayerKind::Conv { spec, bias: b } => {
                let w = params.value(&node.params[0])?;
                conv2d(x(0), w, bias(params, &node.params, *b)?, spec)?
            }
            LayerKind::Deconv { spec, bias: b } => {
                let w = params.value(&node.params[0])?;
                transposed_conv2d(x(0), w, bias(params, &node.params, *b)?, spec)?
            }
            LayerKind::MaxPool { .. } | LayerKind::DilatedMaxPool { .. }
                if frozen.is_some() =>
            {
                let Some(Cache::Pool(idx)) = frozen.map(|f| &f.caches[id]) else {
                    return Err(Error::Graph("reference pass lacks pooling indices".into()));
                };
                caches[id] = Cache::Pool(idx.clone());
                pool_gather(x(0), idx)?
            }
            LayerKind::MaxPool { window } => {
                let (y, idx) = maxpool2d(x(0), *window)?;
                caches[id] = Cache::Pool(idx);
                y
            }
            LayerKind::DilatedMaxPool { window, dilation } => {
                let (y, idx) = dilated_maxpool2d(x(0), *window, *dilation)?;
                caches[id] = Cache::Pool(idx);
                y
            }
            LayerKind::MaxUnpool { pool } => {
                let Cache::Pool(idx) = &caches[*pool] else {
                    unreachable!("pool runs before its unpool")
                };
                let out_shape = x(0).shape();
                let out_shape = crate::tensor::Shape4::new(
                    out_shape.n,
                    out_shape.c,
                    out_shape.h * idx.window(),
                    out_shape.w * idx.window(),
                )?;
                max_unpool2d(x(0), idx, out_shape)?
            }
            LayerKind::AvgPool { window } => avg_pool2d(x(0), *window)?,
            LayerKind::BatchNorm => {
                let (gamma, beta) = bn_params(graph, params, id)?;
                match mode {
                    Mode::Train => {
                        let (y, cache) = batchnorm_train(x(0), gamma, beta, BN_EPS);
                        caches[id] = Cache::Bn(cache);
                        y
                    }
                    Mode::Infer => {
                        let stats = params
                            .running(&node.name)
                            .filter(|s| s.updates > 0)
                            .ok_or_else(|| Error::NotTrained(node.name.clone()))?;
                        batchnorm_infer(x(0), gamma, beta, stats, BN_EPS)?
                    }
                }
            }
            LayerKind::Relu => match frozen.and_then(|f| f.outputs[id].as_ref()) {
                Some(r) => {
                    let mut y = x(0).clone();
                    for (v, &m) in y.data_mut().iter_mut().zip(r.data()) {
                        if m <= T::zero() {
                            *v = T::zero();
                        }
                    }
                    y
                }
                None => relu_forward(x(0)),
            },
            LayerKind::Concat => {
                let parts: Vec<&Tensor4<T>> = (0..node.inputs.len()).map(x).collect();
                concat_channels(&parts)?
            }
            LayerKind::Add => {
                let mut acc = x(0).clone();
                for k in 1..node.inputs.len() {
                    acc.add_assign(x(k))?;
                }
                acc
            }
            LayerKind::Upsample { factor } => upsample_bilinear(x(0), *factor)?,
        };
        outputs[id] = Some(y);
        if !retain {
            for &i in &node.inputs {
                if last_use[i] == pos && i != graph.output() {
                    outputs[i] = None;
                }
            }
        }
    }
    Ok(Activations {
        outputs,
        caches,
        output: graph.output(),
        mode,
    })
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor4<T>>, g: Tensor4<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Reverse-mode pass: adds every parameter's gradient into `params` and
/// returns the gradient with respect to the network input. Gradients from
/// several consumers of one node are summed.
pub fn backward<T: Scalar>(
    graph: &ArchGraph,
    params: &mut ParamStore<T>,
    acts: &Activations<T>,
    grad_output: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    grad_output.expect_shape(acts.output().shape(), "backward seed gradient")?;
    let count = graph.nodes().len();
    let mut grads: Vec<Option<Tensor4<T>>> = vec![None; count];
    grads[graph.output()] = Some(grad_output.clone());
    let out = |id: NodeId| -> Result<&Tensor4<T>> {
        acts.outputs[id]
            .as_ref()
            .ok_or_else(|| Error::Graph("backward needs the retained activations of forward".into()))
    };
    for &id in graph.order().iter().rev() {
        let Some(g) = grads[id].take() else {
            continue;
        };
        let node = graph.node(id);
        match &node.kind {
            LayerKind::Input => return Ok(g),
            LayerKind::Conv { spec, bias: b } => {
                let x = out(node.inputs[0])?;
                let r = conv2d_backward(x, params.value(&node.params[0])?, &g, spec)?;
                params.accumulate_grad(&node.params[0], r.dw.data())?;
                if *b {
                    params.accumulate_grad(&node.params[1], &r.db)?;
                }
                accumulate(&mut grads[node.inputs[0]], r.dx)?;
            }
            LayerKind::Deconv { spec, bias: b } => {
                let x = out(node.inputs[0])?;
                let r = transposed_conv2d_backward(x, params.value(&node.params[0])?, &g, spec)?;
                params.accumulate_grad(&node.params[0], r.dw.data())?;
                if *b {
                    params.accumulate_grad(&node.params[1], &r.db)?;
                }
                accumulate(&mut grads[node.inputs[0]], r.dx)?;
            }
            LayerKind::MaxPool { .. } => {
                let Cache::Pool(idx) = &acts.caches[id] else {
                    unreachable!()
                };
                let xs = out(node.inputs[0])?.shape();
                accumulate(&mut grads[node.inputs[0]], maxpool2d_backward(xs, idx, &g)?)?;
            }
            LayerKind::DilatedMaxPool { .. } => {
                let Cache::Pool(idx) = &acts.caches[id] else {
                    unreachable!()
                };
                accumulate(&mut grads[node.inputs[0]], dilated_maxpool2d_backward(idx, &g)?)?;
            }
            LayerKind::MaxUnpool { pool } => {
                let Cache::Pool(idx) = &acts.caches[*pool] else {
                    unreachable!()
                };
                accumulate(&mut grads[node.inputs[0]], max_unpool2d_backward(idx, &g)?)?;
            }
            LayerKind::AvgPool { window } => {
                accumulate(&mut grads[node.inputs[0]], avg_pool2d_backward(&g, *window)?)?;
            }
            LayerKind::BatchNorm => {
                let gamma = params.value(&node.params[0])?.data().to_vec();
                let r = match &acts.caches[id] {
                    Cache::Bn(cache) => batchnorm_backward(cache, &gamma, &g)?,
                    _ => {
                        let stats = params
                            .running(&node.name)
                            .ok_or_else(|| Error::NotTrained(node.name.clone()))?;
                        batchnorm_infer_backward(out(node.inputs[0])?, &gamma, stats, BN_EPS, &g)?
                    }
                };
                params.accumulate_grad(&node.params[0], &r.dgamma)?;
                params.accumulate_grad(&node.params[1], &r.dbeta)?;
                accumulate(&mut grads[node.inputs[0]], r.dx)?;
            }
            LayerKind::Relu => {
                accumulate(&mut grads[node.inputs[0]], relu_backward(out(node.inputs[0])?, &g)?)?;
            }
            LayerKind::Concat => {
                let widths: Vec<usize> = node
                    .inputs
                    .iter()
                    .map(|&i| graph.node(i).channels)
                    .collect();
                for (&i, part) in node.inputs.iter().zip(split_channels(&g, &widths)?) {
                    accumulate(&mut grads[i], part)?;
                }
            }
            LayerKind::Add => {
                for &i in &node.inputs {
                    accumulate(&mut grads[i], g.clone())?;
                }
            }
            LayerKind::Upsample { factor } => {
                let xs = out(node.inputs[0])?.shape();
                accumulate(
                    &mut grads[node.inputs[0]],
                    upsample_bilinear_backward(xs, &g, *factor)?,
                )?;
            }
        }
    }
    // The input was never reached: the output does not depend on it.
    Ok(Tensor4::zeros(out(graph.input())?.shape()))
}

/// Folds the batch statistics of a training-mode pass into the running
/// statistics of every batch-norm node.
pub fn update_running_stats<T: Scalar>(
    graph: &ArchGraph,
    params: &mut ParamStore<T>,
    acts: &Activations<T>,
) -> Result<()> {
    for &id in graph.order() {
        if let Cache::Bn(cache) = &acts.caches[id] {
            let s = cache.xhat.shape();
            params.update_running(
                &graph.node(id).name,
                &cache.mean,
                &cache.var,
                s.n * s.plane(),
                BN_MOMENTUM,
            )?;
        }
    }
    Ok(())
}
