//! Central-difference verification of [`backward`](crate::nn::backward).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::exec::{backward, forward, forward_frozen, Activations, Mode};
use crate::nn::graph::{ArchGraph, LayerKind};
use crate::nn::loss::{one_hot, softmax_cross_entropy};
use crate::nn::params::ParamStore;
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub coords: usize,
    pub seed: u64,
    pub mode: Mode,
    /// Sign-flips the analytic gradient; a negative control for the harness.
    pub negate_analytic: bool,
    pub kinks: KinkPolicy,
    pub objective: Objective,
}

/// The scalar whose gradient is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Mean softmax cross-entropy against the targets.
    CrossEntropy,
    /// `sum(targets * output)`: for a network linear in a coordinate,
    /// central differences are exact up to rounding.
    Linear,
}

/// How finite differences treat ReLU and max-pool switches that fall
/// within `±epsilon` of the evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KinkPolicy {
    /// Plain differences of the network function.
    Ignore,
    /// Re-draw coordinates whose perturbed passes switch any branch.
    Resample,
    /// Evaluate the perturbed passes with the branch choices (ReLU active
    /// sets, pool argmaxes) of the unperturbed pass. That function agrees
    /// with the network near the point, so it has the same derivative there.
    Freeze,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-4,
            coords: 60,
            seed: 0,
            mode: Mode::Train,
            negate_analytic: false,
            kinks: KinkPolicy::Freeze,
            objective: Objective::CrossEntropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Coord {
    Param { name: String, index: usize },
    Input { index: usize },
}

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub coord: Coord,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    /// Largest analytic gradient magnitude among the conv biases that feed a
    /// training-mode batch norm, whose true gradient is identically zero.
    pub structural_zero_max: f64,
    pub structural_zero_params: Vec<String>,
    /// Coordinates re-drawn because their finite difference crossed a kink.
    pub resampled: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance && self.structural_zero_max < 1e-10
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Random labels for a cross-entropy objective over `graph`'s output.
pub fn random_targets(graph: &ArchGraph, input: Shape4, seed: u64) -> Result<Tensor4<f64>> {
    let shapes = graph.infer_shapes(input)?;
    let out = shapes[graph.output()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a6e_7431);
    let labels: Vec<u8> = (0..out.n * out.plane())
        .map(|_| rng.random_range(0..out.c as u8))
        .collect();
    one_hot(&labels, out)
}

/// Conv biases whose only consumers are batch-norm nodes: batch
/// normalization subtracts the per-channel mean, so in training mode these
/// never influence the loss.
pub fn structurally_zero_params(graph: &ArchGraph, mode: Mode) -> Vec<String> {
    if mode != Mode::Train {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (id, n) in graph.nodes().iter().enumerate() {
        let has_bias = match &n.kind {
            LayerKind::Conv { bias, .. } | LayerKind::Deconv { bias, .. } => *bias,
            _ => false,
        };
        if !has_bias {
            continue;
        }
        let consumers = graph.consumers(id);
        if !consumers.is_empty()
            && consumers
                .iter()
                .all(|&c| graph.node(c).kind == LayerKind::BatchNorm)
        {
            out.push(n.params[1].clone());
        }
    }
    out
}

fn objective(out: &Tensor4<f64>, targets: &Tensor4<f64>, kind: Objective) -> Result<(f64, Tensor4<f64>)> {
    match kind {
        Objective::CrossEntropy => {
            let l = softmax_cross_entropy(out, targets, None)?;
            Ok((l.loss, l.grad))
        }
        Objective::Linear => Ok((out.dot(targets)?, targets.clone())),
    }
}

fn loss(
    graph: &ArchGraph,
    params: &ParamStore<f64>,
    input: &Tensor4<f64>,
    targets: &Tensor4<f64>,
    config: &GradCheckConfig,
    reference: Option<&Activations<f64>>,
) -> Result<(f64, u64)> {
    let acts = match reference {
        Some(r) => forward_frozen(graph, params, input, config.mode, r)?,
        None => forward(graph, params, input, config.mode)?,
    };
    let (l, _) = objective(acts.output(), targets, config.objective)?;
    Ok((l, acts.kink_signature(graph)))
}

/// Compares backpropagated gradients of the configured objective against
/// central differences at `config.coords` sampled coordinates (parameters and
/// input). Every eligible parameter tensor and the input get at least one
/// coordinate when `coords` allows. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn grad_check(
    graph: &ArchGraph,
    params: &ParamStore<f64>,
    input: &Tensor4<f64>,
    targets: &Tensor4<f64>,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mode = config.mode;
    let mut work = params.clone();
    work.zero_grad();
    let acts = forward(graph, &work, input, mode)?;
    let base_sig = acts.kink_signature(graph);
    let (_, grad) = objective(acts.output(), targets, config.objective)?;
    let dx = backward(graph, &mut work, &acts, &grad)?;
    let reference = (config.kinks == KinkPolicy::Freeze).then_some(&acts);

    let zero_names = structurally_zero_params(graph, mode);
    let structural_zero_max = zero_names
        .iter()
        .filter_map(|n| work.get(n))
        .flat_map(|e| e.grad.data().iter().map(|g| g.abs()))
        .fold(0.0, f64::max);

    let eligible: Vec<(String, usize)> = work
        .iter()
        .filter(|(name, _)| !zero_names.iter().any(|z| z == name))
        .map(|(name, e)| (name.to_string(), e.value.shape().len()))
        .collect();
    let total: usize = eligible.iter().map(|e| e.1).sum::<usize>() + input.shape().len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |forced: Option<usize>| -> Coord {
        // `forced` picks the tensor; otherwise uniform over all scalars
        match forced {
            Some(t) if t < eligible.len() => Coord::Param {
                name: eligible[t].0.clone(),
                index: rng.random_range(0..eligible[t].1),
            },
            Some(_) => Coord::Input {
                index: rng.random_range(0..input.shape().len()),
            },
            None => {
                let mut k = rng.random_range(0..total);
                for (name, len) in &eligible {
                    if k < *len {
                        return Coord::Param {
                            name: name.clone(),
                            index: k,
                        };
                    }
                    k -= len;
                }
                Coord::Input { index: k }
            }
        }
    };

    let mut scratch = params.clone();
    let mut x = input.clone();
    let mut checks = Vec::with_capacity(config.coords);
    let mut resampled = 0;
    let slots = eligible.len() + 1;
    let mut slot = 0;
    let mut attempts = 0;
    let max_attempts = config.coords * 20 + 100;
    while checks.len() < config.coords && attempts < max_attempts {
        attempts += 1;
        let forced = (slot < slots).then_some(slot);
        let coord = draw(forced);
        let analytic = match &coord {
            Coord::Param { name, index } => work.get(name).expect("eligible").grad.data()[*index],
            Coord::Input { index } => dx.data()[*index],
        };
        let mut eval = |delta: f64| -> Result<(f64, u64)> {
            match &coord {
                Coord::Param { name, index } => {
                    let orig = scratch.value(name)?.data()[*index];
                    scratch.value_mut(name)?.data_mut()[*index] = orig + delta;
                    let r = loss(graph, &scratch, input, targets, config, reference);
                    scratch.value_mut(name)?.data_mut()[*index] = orig;
                    r
                }
                Coord::Input { index } => {
                    let orig = x.data()[*index];
                    x.data_mut()[*index] = orig + delta;
                    let r = loss(graph, params, &x, targets, config, reference);
                    x.data_mut()[*index] = orig;
                    r
                }
            }
        };
        let (lp, sp) = eval(config.epsilon)?;
        let (lm, sm) = eval(-config.epsilon)?;
        if config.kinks == KinkPolicy::Resample && (sp != base_sig || sm != base_sig) {
            resampled += 1;
            continue;
        }
        slot += 1;
        let numeric = (lp - lm) / (2.0 * config.epsilon);
        let analytic = if config.negate_analytic { -analytic } else { analytic };
        checks.push(CoordCheck {
            rel_error: relative_error(analytic, numeric),
            coord,
            analytic,
            numeric,
        });
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let mean_rel_error =
        checks.iter().map(|c| c.rel_error).sum::<f64>() / checks.len().max(1) as f64;
    Ok(GradCheckReport {
        checks,
        max_rel_error,
        mean_rel_error,
        structural_zero_max,
        structural_zero_params: zero_names,
        resampled,
    })
}
