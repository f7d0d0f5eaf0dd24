//! Dense `f64` tensors, a reverse-mode tape, Adam and the `TCHK` checkpoint
//! format.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{NumericsError, Result};
pub use graph::{Graph, Var};
pub use tensor::{validate_param_name, ParamStore, Parameter, Tensor};
