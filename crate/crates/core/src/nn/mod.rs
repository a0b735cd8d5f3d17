//! Layers, parameters, graph execution and gradient checking.

pub mod activation;
pub mod batchnorm;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod loss;
pub mod params;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, BnMode, BN_EPS, BN_MOMENTUM};
pub use exec::{backward, forward, forward_frozen, predict, update_running_stats, Activations, Mode};
pub use gradcheck::{grad_check, random_targets, GradCheckConfig, GradCheckReport, KinkPolicy, Objective};
pub use graph::{ArchGraph, Family, GraphBuilder, Init, LayerKind, Node, NodeId, ParamDecl, Stride};
pub use init::init_params;
pub use loss::{one_hot, softmax, softmax_cross_entropy, LossValue};
pub use params::{ParamEntry, ParamRole, ParamStore, RunningStats};
