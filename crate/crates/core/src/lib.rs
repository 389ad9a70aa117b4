//! Core library for 3D data processing.
//!
//! The crate is organized around a small set of geometry containers
//! ([`PointCloud`], [`TriangleMesh`], [`Image`], [`RgbdImage`]) and the
//! algorithms that consume them:
//!
//! - [`geometry`]: voxel downsampling, normal estimation, RGB-D back-projection,
//!   rigid transforms.
//! - [`spatial`]: exact KD-tree with KNN, radius and hybrid queries.
//! - [`features`]: 33-bin FPFH descriptors.
//! - [`registration`]: feature-matching RANSAC and point-to-point /
//!   point-to-plane ICP.
//! - [`optim`]: Gauss-Newton and Levenberg-Marquardt solvers with a
//!   deterministic parallel reduction, SE(3) maps, robust pose-graph
//!   optimization.
//! - [`integration`]: TSDF fusion and marching-cubes extraction.
//! - [`io`]: PLY, PCD, PGM/PPM, pose-graph and feature files.
//! - [`pipeline`]: the fragment-based scene reconstruction driver.
//!
//! ```no_run
//! use r3d::{io, geometry, spatial::SearchParam};
//!
//! # fn main() -> r3d::Result<()> {
//! let cloud = io::read_point_cloud("pointcloud.ply")?;
//! let mut down = geometry::voxel_down_sample(&cloud, 0.05)?;
//! geometry::estimate_normals(&mut down, SearchParam::Hybrid { radius: 0.1, max_nn: 30 })?;
//! io::write_point_cloud("downsampled.ply", &down, io::FileFormat::PlyBinary)?;
//! # Ok(())
//! # }
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod features;
pub mod geometry;
pub mod integration;
pub mod io;
pub mod optim;
pub mod parallel;
pub mod pipeline;
pub mod registration;
pub mod spatial;
pub mod synthetic;

pub use error::{Error, Location, Result};
pub use features::FeatureMatrix;

pub use optim::PoseGraph;
pub use geometry::{
    Image, ImageData, PinholeCameraIntrinsic, PointCloud, RgbdImage, RigidTransform, TriangleMesh,
};



pub use integration::TsdfVolume;
pub use registration::RegistrationResult;
pub use spatial::{KdTree, SearchParam};
