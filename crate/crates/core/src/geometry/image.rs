use super::PointCloud;
use crate::error::{Error, Result};
use nalgebra::Vector3;

/// Row-major pixel storage.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageData {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl ImageData {
    pub fn len(&self) -> usize {
        match self {
            ImageData::U8(v) => v.len(),
            ImageData::U16(v) => v.len(),
            ImageData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            ImageData::U8(v) => v[i] as f64,
            ImageData::U16(v) => v[i] as f64,
            ImageData::F32(v) => v[i] as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: ImageData,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: ImageData) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::invalid("image dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "buffer holds {} values, {width}x{height}x{channels} needs {expected}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &ImageData {
        &self.data
    }

    pub fn into_data(self) -> ImageData {
        self.data
    }

    /// Raw value of channel `c` at column `u`, row `v`.
    pub fn value(&self, u: usize, v: usize, c: usize) -> f64 {
        self.data.get((v * self.width + u) * self.channels + c)
    }

    /// Color at a pixel scaled to `[0, 1]` (8-bit divided by 255, 16-bit by
    /// 65535, float as stored). Single-channel images are replicated to gray.
    pub fn color(&self, u: usize, v: usize) -> Vector3<f64> {
        let scale = match self.data {
            ImageData::U8(_) => 1.0 / 255.0,
            ImageData::U16(_) => 1.0 / 65535.0,
            ImageData::F32(_) => 1.0,
        };
        if self.channels == 1 {
            Vector3::repeat(self.value(u, v, 0) * scale)
        } else {
            Vector3::new(self.value(u, v, 0), self.value(u, v, 1), self.value(u, v, 2)) * scale
        }
    }
}

/// Color and metric depth of the same resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdImage {
    color: Image,
    depth: Image,
}

impl RgbdImage {
    /// `depth` must be single-channel f32 in meters; 0 marks invalid pixels.
    pub fn new(color: Image, depth: Image) -> Result<Self> {
        if color.width != depth.width || color.height != depth.height {
            return Err(Error::invalid(format!(
                "color is {}x{}, depth is {}x{}",
                color.width, color.height, depth.width, depth.height
            )));
        }
        if color.channels != 3 {
            return Err(Error::invalid("color image must have 3 channels"));
        }
        match &depth.data {
            ImageData::F32(d) if depth.channels == 1 => {
                if d.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::invalid("depth values must be non-negative"));
                }
            }
            _ => return Err(Error::invalid("depth must be a 1-channel float image")),
        }
        Ok(Self { color, depth })
    }

    pub fn color(&self) -> &Image {
        &self.color
    }

    pub fn depth(&self) -> &Image {
        &self.depth
    }

    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    pub fn depth_values(&self) -> &[f32] {
        match &self.depth.data {
            ImageData::F32(d) => d,
            _ => unreachable!("checked in constructor"),
        }
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth_values().iter().filter(|&&d| d > 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCameraIntrinsic {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeCameraIntrinsic {
    pub fn new(width: usize, height: usize, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Pixel containing the projection of camera-frame point `p`, if in view.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(usize, usize)> {
        if p.z <= 0.0 {
            return None;
        }
        let u = (self.fx * p.x / p.z + self.cx + 0.5).floor();
        let v = (self.fy * p.y / p.z + self.cy + 0.5).floor();
        if u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64 {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }
}

/// Converts a raw 16-bit depth map to meters: `raw / depth_scale`, with values
/// beyond `depth_trunc` set to 0.
pub fn depth_from_raw(raw: &Image, depth_scale: f64, depth_trunc: f64) -> Result<Image> {
    if !(depth_scale > 0.0 && depth_scale.is_finite()) {
        return Err(Error::invalid(format!("depth_scale must be positive, got {depth_scale}")));
    }
    if !(depth_trunc > 0.0) {
        return Err(Error::invalid(format!("depth_trunc must be positive, got {depth_trunc}")));
    }
    let values = match (&raw.data, raw.channels) {
        (ImageData::U16(v), 1) => v,
        _ => return Err(Error::invalid("raw depth must be a 1-channel 16-bit image")),
    };
    let depth = values
        .iter()
        .map(|&r| {
            let d = r as f64 / depth_scale;
            if d > depth_trunc {
                0.0
            } else {
                d as f32
            }
        })
        .collect();
    Image::new(raw.width, raw.height, 1, ImageData::F32(depth))
}

/// Back-projects every pixel with positive depth into the camera frame,
/// scanning rows top to bottom.
pub fn create_point_cloud_from_rgbd(rgbd: &RgbdImage, intrinsic: &PinholeCameraIntrinsic) -> Result<PointCloud> {
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
    let depth = rgbd.depth_values();
    let mut cloud = PointCloud::default();
    let count = rgbd.valid_depth_count();
    cloud.points.reserve(count);
    cloud.colors.reserve(count);
    for v in 0..rgbd.height() {
        for u in 0..rgbd.width() {
            let d = depth[v * rgbd.width() + u] as f64;
            if d > 0.0 {
                cloud.points.push(Vector3::new(
                    (u as f64 - intrinsic.cx) * d / intrinsic.fx,
                    (v as f64 - intrinsic.cy) * d / intrinsic.fy,
                    d,
                ));
                cloud.colors.push(rgbd.color().color(u, v));
            }
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intrinsic(w: usize, h: usize) -> PinholeCameraIntrinsic {
        PinholeCameraIntrinsic::new(w, h, 50.0, 50.0, (w / 2) as f64, (h / 2) as f64).unwrap()
    }

    fn rgbd(w: usize, h: usize, depth: Vec<f32>) -> RgbdImage {
        let color = Image::new(w, h, 3, ImageData::U8(vec![255; w * h * 3])).unwrap();
        RgbdImage::new(color, Image::new(w, h, 1, ImageData::F32(depth)).unwrap()).unwrap()
    }

    #[test]
    fn buffer_length_checked() {
        assert!(Image::new(2, 2, 1, ImageData::U8(vec![0; 3])).is_err());
        assert!(Image::new(2, 2, 2, ImageData::U8(vec![0; 8])).is_err());
    }

    #[test]
    fn depth_conversion_rules() {
        let raw = Image::new(3, 1, 1, ImageData::U16(vec![5000, 0, 65535])).unwrap();
        let d = depth_from_raw(&raw, 5000.0, 100.0).unwrap();
        assert_eq!(d.data(), &ImageData::F32(vec![1.0, 0.0, 13.107]));
        let d = depth_from_raw(&raw, 1000.0, 4.0).unwrap();
        assert_eq!(d.value(2, 0, 0), 0.0);
        assert!(depth_from_raw(&raw, 0.0, 1.0).is_err());
        assert!(depth_from_raw(&raw, 1.0, -1.0).is_err());
        let eight = Image::new(1, 1, 1, ImageData::U8(vec![1])).unwrap();
        assert!(depth_from_raw(&eight, 1.0, 1.0).is_err());
    }

    #[test]
    fn principal_point_ray() {
        let mut depth = vec![0.0; 16];
        depth[2 * 4 + 2] = 2.0;
        let cloud = create_point_cloud_from_rgbd(&rgbd(4, 4, depth), &intrinsic(4, 4)).unwrap();
        assert_eq!(cloud.points, vec![Vector3::new(0.0, 0.0, 2.0)]);
        assert_eq!(cloud.colors, vec![Vector3::repeat(1.0)]);
    }

    #[test]
    fn constant_depth_is_planar() {
        let cloud = create_point_cloud_from_rgbd(&rgbd(8, 6, vec![1.0; 48]), &intrinsic(8, 6)).unwrap();
        assert_eq!(cloud.len(), 48);
        assert!(cloud.points.iter().all(|p| p.z == 1.0));
    }

    #[test]
    fn resolution_mismatch() {
        assert!(matches!(
            create_point_cloud_from_rgbd(&rgbd(4, 4, vec![1.0; 16]), &intrinsic(8, 4)),
            Err(Error::InvalidArgument(_))
        ));
        let color = Image::new(4, 4, 3, ImageData::U8(vec![0; 48])).unwrap();
        let depth = Image::new(4, 3, 1, ImageData::F32(vec![0.0; 12])).unwrap();
        assert!(RgbdImage::new(color, depth).is_err());
    }

    #[test]
    fn intrinsic_invariants() {
        assert!(PinholeCameraIntrinsic::new(4, 4, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(PinholeCameraIntrinsic::new(4, 4, 1.0, 1.0, 4.0, 1.0).is_err());
    }
}
