//! Masked pre-training, attribution-guided selective fine-tuning and
//! robust feature fusion for all-in-one image restoration, on a small
//! self-contained autodiff engine.

pub mod attribution;
pub mod degrade;
pub mod error;
pub mod imageio;
pub mod masking;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod run;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Gradients, Graph, Real, Tensor, Var};
