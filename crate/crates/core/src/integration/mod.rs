//! Truncated signed distance fusion of RGB-D frames and surface extraction.

mod marching_cubes;
mod tables;

use crate::error::{Error, Result};
use crate::geometry::{PinholeCameraIntrinsic, RgbdImage, RigidTransform};
use nalgebra::Vector3;
use rayon::prelude::*;

/// Dense cubic TSDF grid.
///
/// Voxel `(i, j, k)` has its center at `origin + (i + 0.5, j + 0.5, k + 0.5) * voxel_size`
/// and is stored at `(k * resolution + j) * resolution + i`. Positive values
/// lie in front of the observed surface, negative values behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    resolution: usize,
    voxel_size: f64,
    sdf_trunc: f64,
    origin: Vector3<f64>,
    tsdf: Vec<f64>,
    weight: Vec<f64>,
    color: Vec<[f32; 3]>,
}

impl TsdfVolume {
    pub fn new(origin: Vector3<f64>, voxel_size: f64, resolution: usize, sdf_trunc: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid(format!("voxel_size must be positive, got {voxel_size}")));
        }
        if !(sdf_trunc > 0.0 && sdf_trunc.is_finite()) {
            return Err(Error::invalid(format!("sdf_trunc must be positive, got {sdf_trunc}")));
        }
        if resolution < 2 {
            return Err(Error::invalid(format!("resolution must be at least 2, got {resolution}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("origin must be finite"));
        }
        let n = resolution
            .checked_pow(3)
            .filter(|&n| n <= 1 << 30)
            .ok_or_else(|| Error::invalid(format!("resolution {resolution} is too large")))?;
        Ok(Self {
            resolution,
            voxel_size,
            sdf_trunc,
            origin,
            tsdf: vec![0.0; n],
            weight: vec![0.0; n],
            color: vec![[0.0; 3]; n],
        })
    }

    /// Smallest cube with the given voxel size covering `[min, max]`.
    pub fn covering(min: &Vector3<f64>, max: &Vector3<f64>, voxel_size: f64, sdf_trunc: f64) -> Result<Self> {
        if !(voxel_size > 0.0) {
            return Err(Error::invalid(format!("voxel_size must be positive, got {voxel_size}")));
        }
        let extent = (max - min).max();
        if !(extent >= 0.0 && extent.is_finite()) {
            return Err(Error::invalid("bounds must be finite with min <= max"));
        }
        let resolution = ((extent / voxel_size).ceil() as usize + 1).max(2);
        Self::new(*min, voxel_size, resolution, sdf_trunc)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn sdf_trunc(&self) -> f64 {
        self.sdf_trunc
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.origin
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.voxel_size
    }

    pub fn tsdf(&self) -> &[f64] {
        &self.tsdf
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn color(&self) -> &[[f32; 3]] {
        &self.color
    }

    pub fn observed_count(&self) -> usize {
        self.weight.iter().filter(|&&w| w > 0.0).count()
    }

    /// Overwrites one voxel. `tsdf` is clamped to `[-1, 1]`.
    pub fn set_voxel(&mut self, i: usize, j: usize, k: usize, tsdf: f64, weight: f64, color: [f32; 3]) {
        let idx = self.index(i, j, k);
        self.tsdf[idx] = tsdf.clamp(-1.0, 1.0);
        self.weight[idx] = weight.max(0.0);
        self.color[idx] = color;
    }

    /// Fuses one frame. `extrinsic` maps world coordinates to the camera.
    ///
    /// Each voxel center is projected into the depth image; with a valid
    /// depth `d` and camera depth `z`, the observation `s = d - z` is skipped
    /// when `s < -sdf_trunc` and otherwise averaged in as
    /// `min(s / sdf_trunc, 1)` with weight 1.
    pub fn integrate(
        &mut self,
        rgbd: &RgbdImage,
        intrinsic: &PinholeCameraIntrinsic,
        extrinsic: &RigidTransform,
    ) -> Result<()> {
        intrinsic.validate()?;
        if rgbd.width() != intrinsic.width || rgbd.height() != intrinsic.height {
            return Err(Error::invalid(format!(
                "RGB-D image is {}x{}, intrinsic expects {}x{}",
                rgbd.width(),
                rgbd.height(),
                intrinsic.width,
                intrinsic.height
            )));
        }
        let res = self.resolution;
        let slab = res * res;
        let depth = rgbd.depth_values();
        let width = rgbd.width();
        let trunc = self.sdf_trunc;
        let (origin, voxel) = (self.origin, self.voxel_size);
        self.tsdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .zip(self.color.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(k, ((tsdf, weight), color))| {
                for j in 0..res {
                    for i in 0..res {
                        let center = origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * voxel;
                        let pc = extrinsic.apply_point(&center);
                        let Some((u, v)) = intrinsic.project(&pc) else {
                            continue;
                        };
                        let d = depth[v * width + u] as f64;
                        if d <= 0.0 {
                            continue;
                        }
                        let s = d - pc.z;
                        if s < -trunc {
                            continue;
                        }
                        let observed = (s / trunc).min(1.0);
                        let idx = j * res + i;
                        let w = weight[idx];
                        tsdf[idx] = (w * tsdf[idx] + observed) / (w + 1.0);
                        let c = rgbd.color().color(u, v);
                        for ch in 0..3 {
                            color[idx][ch] = ((w * color[idx][ch] as f64 + c[ch]) / (w + 1.0)) as f32;
                        }
                        weight[idx] = w + 1.0;
                    }
                }
            });
        Ok(())
    }

    fn check_observed(&self) -> Result<()> {
        if self.weight.iter().all(|&w| w <= 0.0) {
            return Err(Error::EmptyMesh("volume has no observed voxels".into()));
        }
        Ok(())
    }
}

pub use marching_cubes::{extract_point_cloud, extract_triangle_mesh};
