//! Weakly supervised 3D local descriptors for point cloud registration.
//!
//! The pipeline turns the neighborhood of a keypoint into an occupancy-probability
//! voxel grid (oriented by a local reference frame, sized by a learnable support),
//! maps the grid to a unit-length descriptor with a small 3D CNN, and trains the CNN
//! by penalizing how far a weighted least-squares affine fit between two partially
//! overlapping clouds deviates from a rigid motion. At inference the descriptors feed
//! a RANSAC registration.
//!
//! Numerical code that participates in training is generic over [`Real`] so the
//! same kernels run in `f32` for training and `f64` for gradient verification.
//! Geometry (points, frames, transforms) is always `f64`.

pub mod alignment;
pub mod autodiff;
pub mod datagen;
pub mod descriptor;
mod error;
pub mod linalg;
pub mod lrf;
pub mod matching;
pub mod metrics;
pub mod pointcloud;
pub mod registration;
mod scalar;
pub mod trainer;
pub mod voxelizer;

pub use error::{Error, Result};
pub use scalar::Real;

/// 3-vector of `f64` used for all geometry.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3x3 matrix of `f64` used for all geometry.
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Single-precision tensor used by training.
pub type Tensor32 = autodiff::Tensor<f32>;
/// Double-precision tensor used by gradient checks.
pub type Tensor64 = autodiff::Tensor<f64>;
/// Network parameters in training precision.
pub type NetworkParams32 = descriptor::NetworkParams<f32>;
/// Network parameters in verification precision.
pub type NetworkParams64 = descriptor::NetworkParams<f64>;
/// Tape recording single-precision operations.
pub type Tape32<'p> = autodiff::Tape<'p, f32>;
/// Tape recording double-precision operations.
pub type Tape64<'p> = autodiff::Tape<'p, f64>;
