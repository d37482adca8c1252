//! Pure geometry kernels: centering, per-edge frame construction,
//! scalarization, graph topology, distance featurization, and the random
//! transform samplers the property harness uses. Everything here is a pure
//! function over plain f64 data.

mod error;
mod frame;
mod graph;
mod knn;
mod rbf;
pub mod transform;
pub mod vec3;

pub use error::{GeomError, Result};
pub use frame::{frame_for_pair, localize, scalarize, Frame, FRAME_EPS};
pub use graph::{centralize, decentralize, GeoGraph};
pub use knn::{fully_connected, knn_graph};
pub use rbf::rbf_encode;
pub use transform::{
    det3, mat_mul, mat_vec, random_reflection, random_rotation, random_translation, transpose,
    Mat3, IDENTITY,
};
pub use vec3::Vec3;
