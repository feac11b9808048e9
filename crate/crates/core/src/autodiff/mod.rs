//! Minimal reverse-mode differentiation over dense `f64` tensors, plus the
//! layers, optimizer and weight format needed to train the network.

mod adam;
mod checkpoint;
mod gemm;
pub mod gradcheck;
mod graph;
mod nn;
mod params;
mod tensor;

pub use adam::{adam_step, lr_schedule, AdamState, LrSchedule, BETA1, BETA2, EPSILON};
pub(crate) use checkpoint::Reader;
pub use checkpoint::{read_checkpoint, write_checkpoint, MAGIC as CHECKPOINT_MAGIC};
pub use graph::{Gradients, Graph, Var, NORM_EPS};
pub use nn::{Linear, Mlp};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
