//! Neural-network primitives: layer forward/backward passes, focal loss,
//! initialization, L1 regularization and plain SGD.
//!
//! Every function here is pure over its explicit arguments. Mutable training
//! state (parameters, running statistics) lives with the caller.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod init;
pub mod loss;
pub mod optim;
pub mod pool;
pub mod regularize;

use std::collections::BTreeMap;

use crate::tensor::{Real, Tensor};

pub use activation::{relu, relu_backward, softmax_rows};
pub use batchnorm::{batchnorm, batchnorm_backward, BatchNormCache, BatchNormOutput, BnMode, RunningStats};
pub use conv::{conv2d, conv2d_backward, Padding};
pub use dense::{dense, dense_backward};
pub use init::xavier_init;
pub use loss::{focal_loss, focal_loss_batch, LabelConvention, LossConfig};
pub use optim::{sgd_step, sgd_step_in_place};
pub use pool::{
    maxpool, maxpool2x2, maxpool2x2_backward, maxpool_backward, maxpool_backward_from_indices, maxpool_with_indices,
    MaxPoolOutput,
};
pub use regularize::l1_penalty;

/// Backprop carrier: gradient w.r.t. a layer's input plus one gradient per parameter.
#[derive(Debug, Clone)]
pub struct LayerGradients<T: Real = f32> {
    pub input_grad: Tensor<T>,
    pub param_grads: BTreeMap<&'static str, Tensor<T>>,
}

impl<T: Real> LayerGradients<T> {
    pub fn new(input_grad: Tensor<T>) -> Self {
        Self { input_grad, param_grads: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &'static str, grad: Tensor<T>) {
        self.param_grads.insert(name, grad);
    }

    /// Panics if the layer has no parameter called `name`.
    pub fn param(&self, name: &str) -> &Tensor<T> {
        &self.param_grads[name]
    }

    pub fn take(&mut self, name: &str) -> Option<Tensor<T>> {
        self.param_grads.remove(name)
    }
}
