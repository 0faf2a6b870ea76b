//! Pose estimation and litter mapping for a small ROV in a swimming pool.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which the simulator and tools use.

pub mod ekf;
pub mod geometry;
pub mod io;
pub mod mapper;
pub mod pipeline;
pub mod scalar;
pub mod scenario;
pub mod segmentation;
pub mod simulator;

pub use scalar::Real;

pub type Pose = ekf::Pose15<f64>;
pub type Covariance = ekf::Covariance15<f64>;
pub type Filter = ekf::Ekf<f64>;
pub type Camera = geometry::CameraModel<f64>;
pub type Intrinsics = geometry::CameraIntrinsics<f64>;
pub type Euler = geometry::EulerAngles<f64>;
pub type Map = mapper::LitterMap<f64>;
