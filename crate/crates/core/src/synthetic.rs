//! Analytic test data: a bumpy blob point cloud and ray-cast RGB-D frames of
//! simple scenes with known geometry and camera trajectory.

use crate::error::{Error, Result};
use crate::geometry::{Image, ImageData, PinholeCameraIntrinsic, PointCloud, RgbdImage, RigidTransform};
use crate::io;
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use std::f64::consts::PI;
use std::path::Path;

/// Raw depth units per meter in generated datasets.
pub const DEPTH_SCALE: f64 = 5000.0;

/// Radius of the blob along direction `(theta, phi)`.
fn blob_radius(theta: f64, phi: f64) -> f64 {
    0.3 * (1.0 + 0.22 * (3.0 * phi).sin() * theta.sin() + 0.15 * (2.0 * theta + 0.5).cos() + 0.1 * (5.0 * phi + 1.0).cos() * theta.sin().powi(2))
}

/// `n` points on a closed, non-symmetric bumpy surface about 0.6 across.
pub fn blob(n: usize, seed: u64) -> PointCloud {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let theta = z.acos();
            let r = blob_radius(theta, phi);
            Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), z) * r
        })
        .collect();
    PointCloud::from_points(points)
}

/// Uniformly random rotation axis, angle in `[0, max_angle)`, translation in
/// `[-max_translation, max_translation]^3`.
pub fn random_transform(rng: &mut impl Rng, max_angle: f64, max_translation: f64) -> RigidTransform {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    let axis = Vector3::new(s * phi.cos(), s * phi.sin(), z);
    let angle = rng.random_range(0.0..max_angle);
    let t = Vector3::from_fn(|_, _| rng.random_range(-max_translation..=max_translation));
    RigidTransform::from_axis_angle(&axis, angle, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Rectangle `center + s * u + t * v` with `|s| <= half.0`, `|t| <= half.1`;
    /// `u` and `v` orthonormal.
    Rectangle {
        center: Vector3<f64>,
        u: Vector3<f64>,
        v: Vector3<f64>,
        half: (f64, f64),
    },
}

impl Primitive {
    /// Ray parameter of the first hit with `t > 1e-9`.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > 1e-9)
            }
            Primitive::Rectangle { center, u, v, half } => {
                let n = u.cross(&v);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(center - origin)) / denom;
                if t <= 1e-9 {
                    return None;
                }
                let d = origin + dir * t - center;
                (d.dot(&u).abs() <= half.0 && d.dot(&v).abs() <= half.1).then_some(t)
            }
        }
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => ((p - center).norm() - radius).abs(),
            Primitive::Rectangle { center, u, v, half } => {
                let d = p - center;
                let s = d.dot(&u).clamp(-half.0, half.0);
                let t = d.dot(&v).clamp(-half.1, half.1);
                (d - u * s - v * t).norm()
            }
        }
    }

    fn color(&self, p: &Vector3<f64>) -> [u8; 3] {
        let checker = |a: f64, b: f64| ((a.floor() as i64 + b.floor() as i64).rem_euclid(2)) == 0;
        match *self {
            Primitive::Sphere { center, .. } => {
                let d = (p - center).normalize();
                if checker(d.z.acos() * 4.0 / PI, d.y.atan2(d.x) * 4.0 / PI) {
                    [220, 60, 40]
                } else {
                    [240, 220, 200]
                }
            }
            Primitive::Rectangle { center, u, v, .. } => {
                let d = p - center;
                if checker(d.dot(&u) / 0.2, d.dot(&v) / 0.2) {
                    [60, 90, 160]
                } else {
                    [180, 190, 200]
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Self {
            primitives: vec![Primitive::Sphere { center, radius }],
        }
    }

    /// A sphere of radius 0.3 resting on a floor patch in front of a wall.
    pub fn sphere_and_planes() -> Self {
        Self {
            primitives: vec![
                Primitive::Sphere {
                    center: Vector3::new(0.0, 0.0, 0.3),
                    radius: 0.3,
                },
                Primitive::Rectangle {
                    center: Vector3::new(0.0, -0.4, 0.0),
                    u: Vector3::x(),
                    v: Vector3::y(),
                    half: (1.2, 1.0),
                },
                Primitive::Rectangle {
                    center: Vector3::new(0.0, 0.6, 0.6),
                    u: Vector3::x(),
                    v: Vector3::z(),
                    half: (1.2, 0.6),
                },
            ],
        }
    }

    /// Distance from `p` to the nearest surface.
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.primitives.iter().map(|s| s.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Ray casts one frame. `camera_to_world` follows the usual camera
    /// convention: x right, y down, z forward. Depth is the camera z of the
    /// first hit, 0 where nothing is hit.
    pub fn render(&self, intrinsic: &PinholeCameraIntrinsic, camera_to_world: &RigidTransform) -> Result<RgbdImage> {
        intrinsic.validate()?;
        let (w, h) = (intrinsic.width, intrinsic.height);
        let mut depth = vec![0.0f32; w * h];
        let mut color = vec![0u8; w * h * 3];
        let origin = camera_to_world.translation();
        for v in 0..h {
            for u in 0..w {
                let ray_cam = Vector3::new((u as f64 - intrinsic.cx) / intrinsic.fx, (v as f64 - intrinsic.cy) / intrinsic.fy, 1.0);
                let dir = camera_to_world.apply_vector(&ray_cam);
                let hit = self
                    .primitives
                    .iter()
                    .filter_map(|p| p.intersect(&origin, &dir).map(|t| (t, p)))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                if let Some((t, prim)) = hit {
                    let idx = v * w + u;
                    depth[idx] = t as f32;
                    color[idx * 3..idx * 3 + 3].copy_from_slice(&prim.color(&(origin + dir * t)));
                }
            }
        }
        RgbdImage::new(
            Image::new(w, h, 3, ImageData::U8(color))?,
            Image::new(w, h, 1, ImageData::F32(depth))?,
        )
    }
}

/// Camera-to-world pose at `eye` looking at `target` with world `+z` up.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> RigidTransform {
    let f = (target - eye).normalize();
    let r = f.cross(&Vector3::z()).normalize();
    let d = f.cross(&r);
    let m = Matrix3::from_columns(&[r, d, f]);
    RigidTransform::from_rotation(&Rotation3::from_matrix_unchecked(m), *eye)
}

/// `frames` camera poses on a horizontal arc of `arc` radians (centered on
/// the `-y` axis) at `radius` from `target` and `height` above the ground.
pub fn orbit(frames: usize, arc: f64, radius: f64, height: f64, target: &Vector3<f64>) -> Vec<RigidTransform> {
    (0..frames)
        .map(|i| {
            let a = if frames > 1 {
                -arc / 2.0 + arc * i as f64 / (frames - 1) as f64
            } else {
                0.0
            };
            let eye = Vector3::new(target.x + radius * a.sin(), target.y - radius * a.cos(), height);
            look_at(&eye, target)
        })
        .collect()
}

pub fn default_intrinsic() -> PinholeCameraIntrinsic {
    PinholeCameraIntrinsic {
        width: 160,
        height: 120,
        fx: 140.0,
        fy: 140.0,
        cx: 79.5,
        cy: 59.5,
    }
}

/// Quantizes metric depth to raw 16-bit units of `1 / depth_scale` meters.
pub fn raw_depth(rgbd: &RgbdImage, depth_scale: f64) -> Result<Image> {
    let raw = rgbd
        .depth_values()
        .iter()
        .map(|&d| (d as f64 * depth_scale).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    Image::new(rgbd.width(), rgbd.height(), 1, ImageData::U16(raw))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub intrinsic: PinholeCameraIntrinsic,
    pub scene: Scene,
    /// Ground-truth camera-to-world pose per frame.
    pub trajectory: Vec<RigidTransform>,
}

impl Dataset {
    /// The reference sequence: `frames` views of [`Scene::sphere_and_planes`]
    /// on a 60 degree arc 1.5 m from the sphere.
    pub fn sphere_and_planes(frames: usize) -> Self {
        let target = Vector3::new(0.0, 0.0, 0.3);
        Self {
            intrinsic: default_intrinsic(),
            scene: Scene::sphere_and_planes(),
            trajectory: orbit(frames, 60f64.to_radians(), 1.5, 0.9, &target),
        }
    }

    /// Writes `intrinsic.txt`, `color/NNNNNN.ppm`, `depth/NNNNNN.pgm` (raw
    /// units of `1 / DEPTH_SCALE` m) and `trajectory.txt` (16 row-major values
    /// per line) under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mk = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mk(&dir.join("color"))?;
        mk(&dir.join("depth"))?;
        let k = &self.intrinsic;
        let path = dir.join("intrinsic.txt");
        std::fs::write(&path, io::encode_intrinsic(k)).map_err(|e| Error::io(&path, e))?;
        let mut trajectory = String::new();
        for (i, pose) in self.trajectory.iter().enumerate() {
            let rgbd = self.scene.render(k, pose)?;
            io::write_image(dir.join("color").join(format!("{i:06}.ppm")), rgbd.color())?;
            io::write_image(dir.join("depth").join(format!("{i:06}.pgm")), &raw_depth(&rgbd, DEPTH_SCALE)?)?;
            let row: Vec<String> = pose.to_row_major().iter().map(|v| format!("{v:?}")).collect();
            trajectory += &row.join(" ");
            trajectory.push('\n');
        }
        let path = dir.join("trajectory.txt");
        std::fs::write(&path, trajectory).map_err(|e| Error::io(&path, e))
    }
}

/// Reads a `trajectory.txt` written by [`Dataset::write`].
pub fn read_trajectory(path: &Path) -> Result<Vec<RigidTransform>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let values: Vec<f64> = line
                .split_ascii_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::invalid(format!("trajectory line {}: bad number", i + 1)))?;
            RigidTransform::from_row_major(&values)
        })
        .collect()
}
