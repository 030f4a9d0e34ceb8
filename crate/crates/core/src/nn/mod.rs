//! Minimal reverse-mode differentiation kernel sized for small dense
//! networks: a recording tape, parameter tensors, dense layers, the loss
//! functions used by the pipeline, SGD/Adam with value clipping and a
//! finite-difference gradient checker.

mod dense;
mod gradcheck;
pub mod loss;
mod optim;
mod tape;
mod tensor;

pub use dense::{
    forward_row, mlp_forward, rows_leaf, Activation, Dense, DenseNet, DenseSpec, Init,
    DEFAULT_LEAKY_SLOPE,
};
pub use gradcheck::{grad_check, REL_ERROR_FLOOR};
pub use optim::{Algorithm, OptimConfig, Optimizer, StepStats};
pub use tape::{Act, Gradients, Mat, NodeId, Tape};
pub use tensor::{absorb_grads, bind, Binding, Module, Tensor};

/// Records a loss with `objective`, back-propagates it and accumulates the
/// parameter gradients into `module`. Returns the loss value.
pub fn accumulate_gradients<M, F>(module: &mut M, objective: F) -> crate::Result<f64>
where
    M: Module,
    F: FnOnce(&M, &mut Tape, &Binding) -> crate::Result<NodeId>,
{
    let mut tape = Tape::new();
    let binding = bind(module, &mut tape);
    let loss = objective(module, &mut tape, &binding)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(crate::Error::NonFinite("loss"));
    }
    let grads = tape.backward(loss);
    absorb_grads(module, &binding, &grads);
    Ok(value)
}
