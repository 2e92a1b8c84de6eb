//! A deliberately small reverse-mode autodiff engine.
//!
//! Tensors are dense, row-major (NCHW for feature maps) and reference counted.
//! Every differentiable op records a [`GradFn`] on its output; calling
//! [`Tensor::backward`] on a scalar walks the recorded graph in reverse
//! creation order and accumulates gradients into every tensor that requires
//! them. The op set is exactly what a single-stage detector with
//! agglomerated feature hierarchies needs, nothing more.

mod checkpoint;
mod error;
mod gemm;
mod gradcheck;
mod init;
pub mod kink;
pub mod ops;
mod optim;
mod param;
mod scalar;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointEntry};
pub use error::TensorError;
pub use gradcheck::{grad_check, GradCheckReport};
pub use init::{xavier_bound, xavier_init, xavier_uniform};
pub use optim::{sgd_step, SgdConfig};
pub use param::{ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::{GradFn, Tensor};

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
