//! Geometry-complete SE(3)-equivariant graph network.
//!
//! The building blocks mirror the layer structure: [`gcp`] holds the
//! perceptron that jointly updates scalar and vector channels with frame
//! scalarization, [`conv`] composes it into a message-passing layer with
//! equivariant normalization and dropout, and [`net`] runs the end-to-end
//! pipeline of centering, frame construction, embedding, convolution
//! layers, and task heads.

pub mod conv;
mod error;
pub mod gcp;
pub mod net;
mod scalar_vector;
pub mod topo;

pub use conv::{equivariant_dropout, equivariant_norm, Aggregation, ConvConfig, GcpConv};
pub use error::{ModelError, Result};
pub use gcp::{Gcp, GcpConfig, GcpMode, ResGcp};
pub use net::{loss, GcpNet, ModelConfig, Target, TaskHead, TaskOutput};
pub use scalar_vector::ScalarVector;
