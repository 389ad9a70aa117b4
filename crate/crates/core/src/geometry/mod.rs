//! Geometry containers and their basic processing.

pub mod eigen;
mod image;
mod mesh;
mod pointcloud;
mod transform;

pub use image::{create_point_cloud_from_rgbd, depth_from_raw, Image, ImageData, PinholeCameraIntrinsic, RgbdImage};
pub use mesh::{compute_vertex_normals, icosphere, TriangleMesh};
pub use pointcloud::{
    canonical_sign, covariance, estimate_normals, orient_normals_towards_viewpoint, voxel_down_sample, voxel_key,
    PointCloud,
};
pub use transform::{RigidTransform, RIGID_TOLERANCE};
