use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::nn::graph::{ArchGraph, Init, LayerKind};
use crate::nn::params::{ParamStore, RunningStats};
use crate::ops::make_bilinear_kernel;
use crate::tensor::{Scalar, Tensor4};

/// Fresh parameters for `graph`: He-normal kernels, zero biases, unit
/// batch-norm scale, zero shift, bilinear upsampling kernels. Parameters are
/// drawn in declaration order from one seeded stream.
pub fn init_params<T: Scalar>(graph: &ArchGraph, seed: u64) -> Result<ParamStore<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for decl in graph.params() {
        let value = match decl.init {
            Init::He { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .expect("finite standard deviation");
                let data = (0..decl.shape.len())
                    .map(|_| T::of_f64(normal.sample(&mut rng)))
                    .collect();
                Tensor4::from_vec(decl.shape, data)?
            }
            Init::Bilinear { factor } => {
                let k = make_bilinear_kernel::<T>(factor, decl.shape.c)?;
                k.expect_shape(decl.shape, &decl.name)?;
                k
            }
            Init::Zeros => Tensor4::zeros(decl.shape),
            Init::Ones => Tensor4::filled(decl.shape, T::one()),
        };
        store.insert(&decl.name, value, decl.role)?;
    }
    for node in graph.nodes() {
        if node.kind == LayerKind::BatchNorm {
            store.insert_running(&node.name, RunningStats::new(node.channels));
        }
    }
    Ok(store)
}
