//! Independent reference implementations and scenario builders shared by the
//! integration and acceptance tests.

#![allow(dead_code)]

use nalgebra::{Matrix6, Vector3, Vector4};
use r3d::features::compute_fpfh_feature;
use r3d::geometry::estimate_normals;
use r3d::optim::{PoseGraph, PoseGraphEdge};
use r3d::registration::{
    registration_icp, registration_ransac_based_on_feature_matching, CorrespondenceChecker, IcpCriteria, IcpMethod,
    RansacCriteria, RegistrationResult,
};
use r3d::synthetic::{blob, random_transform};
use r3d::{PinholeCameraIntrinsic, PointCloud, RgbdImage, RigidTransform, SearchParam};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use std::collections::BTreeMap;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn random_points(rng: &mut impl Rng, n: usize, extent: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(-extent..extent)))
        .collect()
}

/// Brute-force neighbor query: every `(squared distance, index)` sorted, then
/// filtered by radius and truncated to `max_nn`.
pub fn linear_scan(points: &[Vec<f64>], query: &[f64], param: SearchParam) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    match param {
        SearchParam::Knn { max_nn } => all.truncate(max_nn),
        SearchParam::Radius { radius } => all.retain(|e| e.0 <= radius * radius),
        SearchParam::Hybrid { radius, max_nn } => {
            all.retain(|e| e.0 <= radius * radius);
            all.truncate(max_nn);
        }
    }
    all
}

/// Voxel downsampling by explicit bucketing in an ordered map.
pub fn brute_voxel_down_sample(cloud: &PointCloud, voxel: f64) -> PointCloud {
    let min = cloud.points.iter().fold(Vector3::repeat(f64::INFINITY), |m, p| m.inf(p));
    let mut buckets: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = [0, 1, 2].map(|a| ((p[a] - min[a]) / voxel).floor() as i64);
        buckets.entry(key).or_default().push(i);
    }
    let mut out = PointCloud::default();
    for members in buckets.values() {
        let n = members.len() as f64;
        out.points.push(members.iter().map(|&i| cloud.points[i]).sum::<Vector3<f64>>() / n);
        if cloud.has_normals() {
            let s: Vector3<f64> = members.iter().map(|&i| cloud.normals[i]).sum::<Vector3<f64>>() / n;
            out.normals.push(if s.norm() > 0.0 { s.normalize() } else { s });
        }
        if cloud.has_colors() {
            out.colors.push(members.iter().map(|&i| cloud.colors[i]).sum::<Vector3<f64>>() / n);
        }
    }
    out
}

/// Per-voxel TSDF reference: collects every observation of every voxel and
/// averages them at the end. Returns `(tsdf, weight)` in the volume's
/// storage order.
pub fn naive_tsdf(
    origin: Vector3<f64>,
    voxel: f64,
    resolution: usize,
    trunc: f64,
    intrinsic: &PinholeCameraIntrinsic,
    frames: &[(RgbdImage, RigidTransform)],
) -> (Vec<f64>, Vec<f64>) {
    let mut tsdf = Vec::with_capacity(resolution.pow(3));
    let mut weight = Vec::with_capacity(resolution.pow(3));
    for k in 0..resolution {
        for j in 0..resolution {
            for i in 0..resolution {
                let c = origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * voxel;
                let mut observations = Vec::new();
                for (rgbd, extrinsic) in frames {
                    let pc: Vector4<f64> = extrinsic.matrix() * Vector4::new(c.x, c.y, c.z, 1.0);
                    if pc.z <= 0.0 {
                        continue;
                    }
                    let u = (intrinsic.fx * pc.x / pc.z + intrinsic.cx).round();
                    let v = (intrinsic.fy * pc.y / pc.z + intrinsic.cy).round();
                    if u < 0.0 || v < 0.0 || u >= intrinsic.width as f64 || v >= intrinsic.height as f64 {
                        continue;
                    }
                    let d = rgbd.depth_values()[v as usize * intrinsic.width + u as usize] as f64;
                    if d <= 0.0 || d - pc.z < -trunc {
                        continue;
                    }
                    observations.push(((d - pc.z) / trunc).min(1.0));
                }
                let n = observations.len() as f64;
                tsdf.push(if n > 0.0 { observations.iter().sum::<f64>() / n } else { 0.0 });
                weight.push(n);
            }
        }
    }
    (tsdf, weight)
}

pub const NORMALS: SearchParam = SearchParam::Hybrid { radius: 0.1, max_nn: 30 };
pub const FPFH: SearchParam = SearchParam::Hybrid { radius: 0.25, max_nn: 100 };
pub const RANSAC_DISTANCE: f64 = 0.075;
pub const ICP_DISTANCE: f64 = 0.02;
/// Uniform per-coordinate noise on the target cloud.
pub const PAIR_NOISE: f64 = 5e-4;

pub struct RegistrationCase {
    pub source: PointCloud,
    pub target: PointCloud,
    pub truth: RigidTransform,
}

/// 500-point blob and a copy moved by a random rigid transform, perturbed by
/// [`PAIR_NOISE`], shuffled, with independently estimated normals.
pub fn registration_case(seed: u64) -> RegistrationCase {
    let mut source = blob(500, seed);
    estimate_normals(&mut source, NORMALS).unwrap();
    let mut rng = rng(seed ^ 0xabc);
    let truth = random_transform(&mut rng, std::f64::consts::PI, 0.5);
    let mut points: Vec<Vector3<f64>> = source
        .transform(&truth)
        .points
        .into_iter()
        .map(|p| p + Vector3::from_fn(|_, _| rng.random_range(-PAIR_NOISE..=PAIR_NOISE)))
        .collect();
    points.shuffle(&mut rng);
    let mut target = PointCloud::from_points(points);
    estimate_normals(&mut target, NORMALS).unwrap();
    RegistrationCase { source, target, truth }
}

pub fn default_checkers() -> [CorrespondenceChecker; 2] {
    [CorrespondenceChecker::EdgeLength(0.9), CorrespondenceChecker::Distance(RANSAC_DISTANCE)]
}

/// FPFH + RANSAC with the reference parameters.
pub fn global_registration(case: &RegistrationCase, seed: u64) -> RegistrationResult {
    let fs = compute_fpfh_feature(&case.source, FPFH).unwrap();
    let ft = compute_fpfh_feature(&case.target, FPFH).unwrap();
    registration_ransac_based_on_feature_matching(
        &case.source,
        &case.target,
        &fs,
        &ft,
        RANSAC_DISTANCE,
        4,
        &default_checkers(),
        RansacCriteria::default(),
        seed,
    )
    .unwrap()
}

/// Global registration followed by point-to-plane ICP refinement.
pub fn full_registration(case: &RegistrationCase, seed: u64) -> (RegistrationResult, RegistrationResult) {
    let global = global_registration(case, seed);
    let refined = registration_icp(
        &case.source,
        &case.target,
        ICP_DISTANCE,
        &global.transformation,
        IcpMethod::PointToPlane,
        IcpCriteria::default(),
    )
    .unwrap();
    (global, refined)
}

pub const ODOMETRY_YAW_BIAS: f64 = 0.02;
pub const ODOMETRY_SHIFT_BIAS: f64 = 0.03;
/// Line-process scale for [`noisy_loop`], on the order of the accumulated drift.
pub const LOOP_DISTANCE: f64 = 0.3;

pub struct LoopCase {
    pub truth: Vec<RigidTransform>,
    /// Initial poses chained from the noisy odometry.
    pub graph: PoseGraph,
    /// Index of the injected wrong edge.
    pub outlier: usize,
}

/// `n` poses on a circle of radius 2 facing the center, drifting odometry
/// edges, one exact loop closure and one grossly wrong uncertain edge.
///
/// Each odometry measurement carries a fixed bias (a heading error of
/// [`ODOMETRY_YAW_BIAS`] and a forward offset of [`ODOMETRY_SHIFT_BIAS`])
/// plus small zero-mean noise, so the chained poses drift systematically.
pub fn noisy_loop(n: usize, seed: u64) -> LoopCase {
    noisy_loop_with_bias(n, seed, ODOMETRY_YAW_BIAS, ODOMETRY_SHIFT_BIAS)
}

pub fn noisy_loop_with_bias(n: usize, seed: u64, yaw_bias: f64, shift_bias: f64) -> LoopCase {
    let mut rng = rng(seed);
    let truth: Vec<RigidTransform> = (0..n)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            RigidTransform::from_axis_angle(&Vector3::z(), a, Vector3::new(2.0 * a.cos(), 2.0 * a.sin(), 0.0))
        })
        .collect();
    let info = Matrix6::identity() * 100.0;
    let bias = RigidTransform::from_axis_angle(&Vector3::z(), yaw_bias, Vector3::new(shift_bias, 0.0, 0.0));
    let mut edges = Vec::new();
    let mut nodes = vec![truth[0]];
    for i in 0..n - 1 {
        let exact = truth[i].inverse() * truth[i + 1];
        let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let noise = RigidTransform::from_axis_angle(
            &axis,
            rng.random_range(-0.005..0.005),
            Vector3::from_fn(|_, _| rng.random_range(-0.01..0.01)),
        );
        let measured = exact * bias * noise;
        nodes.push(nodes[i] * measured);
        edges.push(PoseGraphEdge::new(i, i + 1, measured, info, false));
    }
    edges.push(PoseGraphEdge::new(0, n - 1, truth[0].inverse() * truth[n - 1], info, true));
    let wrong = truth[2].inverse() * truth[n / 2 + 2] * RigidTransform::from_axis_angle(&Vector3::x(), 1.2, Vector3::new(1.0, -0.8, 0.5));
    edges.push(PoseGraphEdge::new(2, n / 2 + 2, wrong, info, true));
    let outlier = edges.len() - 1;
    LoopCase {
        truth,
        graph: PoseGraph { nodes, edges },
        outlier,
    }
}

pub fn position_rmse(a: &[RigidTransform], b: &[RigidTransform]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(p, q)| (p.translation() - q.translation()).norm_squared()).sum();
    (sum / a.len() as f64).sqrt()
}

/// Valid inputs for the format fuzzers: `(name, bytes, kind)`.
pub fn fuzz_seeds() -> Vec<(&'static str, Vec<u8>, FuzzKind)> {
    use r3d::io::{encode_image, encode_point_cloud, encode_triangle_mesh, FileFormat};
    use r3d::{Image, ImageData, TriangleMesh};
    let mut rng = rng(99);
    let mut cloud = PointCloud::from_points(random_points(&mut rng, 12, 1.0));
    cloud.normals = random_points(&mut rng, 12, 1.0).iter().map(|n| n.normalize()).collect();
    cloud.colors = (0..12).map(|i| Vector3::repeat(i as f64 / 11.0)).collect();
    let mesh = TriangleMesh::new(cloud.points.clone(), vec![[0, 1, 2], [2, 3, 4], [5, 6, 7], [9, 10, 11]]).unwrap();
    let gray = Image::new(4, 3, 1, ImageData::U8((0..12).collect())).unwrap();
    let depth = Image::new(4, 3, 1, ImageData::U16((0..12).map(|v| v * 1000).collect())).unwrap();
    let rgb = Image::new(3, 2, 3, ImageData::U8((0..18).map(|v| v * 13).collect())).unwrap();
    vec![
        ("ply-ascii", encode_point_cloud(&cloud, FileFormat::PlyAscii).unwrap(), FuzzKind::Ply),
        ("ply-binary", encode_point_cloud(&cloud, FileFormat::PlyBinary).unwrap(), FuzzKind::Ply),
        ("ply-mesh-ascii", encode_triangle_mesh(&mesh, FileFormat::PlyAscii).unwrap(), FuzzKind::PlyMesh),
        ("ply-mesh-binary", encode_triangle_mesh(&mesh, FileFormat::PlyBinary).unwrap(), FuzzKind::PlyMesh),
        ("pcd", encode_point_cloud(&cloud, FileFormat::PcdAscii).unwrap(), FuzzKind::Pcd),
        ("pgm-8", encode_image(&gray).unwrap(), FuzzKind::Netpbm),
        ("pgm-16", encode_image(&depth).unwrap(), FuzzKind::Netpbm),
        ("ppm", encode_image(&rgb).unwrap(), FuzzKind::Netpbm),
    ]
}

#[derive(Debug, Clone, Copy)]
pub enum FuzzKind {
    Ply,
    PlyMesh,
    Pcd,
    Netpbm,
}

pub fn parse_as(kind: FuzzKind, bytes: &[u8]) -> r3d::Result<()> {
    use r3d::io::{parse_image, parse_point_cloud, parse_triangle_mesh, FileFormat};
    match kind {
        FuzzKind::Ply => parse_point_cloud(bytes, FileFormat::PlyBinary).map(|_| ()),
        FuzzKind::PlyMesh => parse_triangle_mesh(bytes).map(|_| ()),
        FuzzKind::Pcd => parse_point_cloud(bytes, FileFormat::PcdAscii).map(|_| ()),
        FuzzKind::Netpbm => parse_image(bytes).map(|_| ()),
    }
}

/// One random structural or byte-level mutation.
pub fn mutate(rng: &mut impl Rng, input: &[u8]) -> Vec<u8> {
    let mut out = input.to_vec();
    let len = out.len().max(1);
    match rng.random_range(0..9) {
        0 => {
            let i = rng.random_range(0..len).min(out.len().saturating_sub(1));
            if let Some(b) = out.get_mut(i) {
                *b ^= 1 << rng.random_range(0..8);
            }
        }
        1 => {
            let i = rng.random_range(0..=out.len());
            out.insert(i, rng.random());
        }
        2 => {
            let at = rng.random_range(0..=out.len());
            out.truncate(at);
        }
        3 => {
            let a = rng.random_range(0..=out.len());
            let b = rng.random_range(a..=out.len().min(a + 16));
            out.drain(a..b);
        }
        4 => {
            let a = rng.random_range(0..=out.len());
            let b = rng.random_range(a..=out.len().min(a + 32));
            let chunk = out[a..b].to_vec();
            let at = rng.random_range(0..=out.len());
            out.splice(at..at, chunk);
        }
        5 => {
            let digits: Vec<usize> = out.iter().enumerate().filter(|(_, b)| b.is_ascii_digit()).map(|(i, _)| i).collect();
            if let Some(&i) = digits.get(rng.random_range(0..digits.len().max(1))) {
                out[i] = b"90x-. "[rng.random_range(0..6)];
            }
        }
        6 => {
            let digits: Vec<usize> = out.iter().enumerate().filter(|(_, b)| b.is_ascii_digit()).map(|(i, _)| i).collect();
            if let Some(&i) = digits.get(rng.random_range(0..digits.len().max(1))) {
                let big: &[u8] = [&b"99999999999999999999"[..], b"4294967295", b"-1", b"nan", b"inf", b"1e308"][rng.random_range(0..6)];
                out.splice(i..i + 1, big.iter().copied());
            }
        }
        7 => {
            for _ in 0..rng.random_range(1..8) {
                let i = rng.random_range(0..len).min(out.len().saturating_sub(1));
                if let Some(b) = out.get_mut(i) {
                    *b = rng.random();
                }
            }
        }
        _ => {
            let lines: Vec<usize> = out.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i).collect();
            if lines.len() >= 2 {
                let a = lines[rng.random_range(0..lines.len())];
                let b = lines[rng.random_range(0..lines.len())];
                let (a, b) = (a.min(b), a.max(b));
                out.drain(a..b);
            }
        }
    }
    out
}

pub enum FuzzOutcome {
    Accepted,
    Located,
    Unlocated(String),
    Panicked(String),
}

/// Parses `bytes` on a helper thread; `None` means it did not finish within
/// `timeout`.
pub fn fuzz_one(kind: FuzzKind, bytes: Vec<u8>, timeout: std::time::Duration) -> Option<FuzzOutcome> {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let outcome = match std::panic::catch_unwind(|| parse_as(kind, &bytes)) {
            Ok(Ok(())) => FuzzOutcome::Accepted,
            Ok(Err(e)) if e.location().is_some() => FuzzOutcome::Located,
            Ok(Err(e)) => FuzzOutcome::Unlocated(e.to_string()),
            Err(p) => FuzzOutcome::Panicked(
                p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default(),
            ),
        };
        let _ = tx.send(outcome);
    });
    rx.recv_timeout(timeout).ok()
}
