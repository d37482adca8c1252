//! Minimal dense-array engine with reverse-mode gradients.
//!
//! Provides the f64 tensor type and differentiable primitives the model
//! crates compose, a deterministic RNG, an adaptive-moment optimizer over a
//! named parameter store, and the binary checkpoint format.

mod checkpoint;
mod error;
pub mod gradcheck;
mod ops;
mod rng;
mod store;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use error::{DiffError, Result};
pub use rng::DetRng;
pub use store::ParamStore;
pub use tensor::{no_grad, Tensor};
