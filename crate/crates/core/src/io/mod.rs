//! Reading and writing point clouds, meshes, images, features and pose graphs.
//!
//! Readers load the whole file and parse from memory. Every grammar
//! violation is reported as [`Error::Parse`] or [`Error::Unsupported`] with a
//! line (text) or byte offset (binary) location. Formats are documented in
//! `docs/formats.md`.

mod feature;
mod netpbm;
mod pcd;
mod ply;
mod pose_graph;

use crate::error::{Error, Location, Result};
use crate::features::FeatureMatrix;
use crate::geometry::{Image, PinholeCameraIntrinsic, PointCloud, TriangleMesh};
use crate::optim::PoseGraph;
use std::path::Path;

pub use pose_graph::{POSE_GRAPH_FORMAT, POSE_GRAPH_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FileFormat {
    PlyAscii,
    PlyBinary,
    PcdAscii,
    Pgm,
    Ppm,
    PoseGraphJson,
    FeatureText,
}

impl FileFormat {
    /// Format family implied by the file extension. PLY files resolve to
    /// [`FileFormat::PlyBinary`]; the header decides the actual encoding.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .unwrap_or_default();
        match ext.as_str() {
            "ply" => Ok(Self::PlyBinary),
            "pcd" => Ok(Self::PcdAscii),
            "pgm" => Ok(Self::Pgm),
            "ppm" => Ok(Self::Ppm),
            "json" => Ok(Self::PoseGraphJson),
            "fpfh" | "feat" | "txt" => Ok(Self::FeatureText),
            _ => Err(Error::invalid(format!("unrecognized file extension for {}", path.display()))),
        }
    }

    fn is_ply(self) -> bool {
        matches!(self, Self::PlyAscii | Self::PlyBinary)
    }
}

pub(crate) fn parse_error(format: &'static str, location: Location, message: impl Into<String>) -> Error {
    Error::Parse {
        format,
        location,
        message: message.into(),
    }
}

pub(crate) fn unsupported(format: &'static str, location: Location, message: impl Into<String>) -> Error {
    Error::Unsupported {
        format,
        location,
        message: message.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Formats an `f64` with the shortest text that parses back to the same bits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let format = FileFormat::from_path(path)?;
    let bytes = read_bytes(path)?;
    parse_point_cloud(&bytes, format)
}

/// Parses point-cloud bytes of the given format family.
pub fn parse_point_cloud(bytes: &[u8], format: FileFormat) -> Result<PointCloud> {
    match format {
        f if f.is_ply() => Ok(ply::parse(bytes)?.cloud),
        FileFormat::PcdAscii => pcd::parse(bytes),
        other => Err(Error::invalid(format!("{other:?} does not hold a point cloud"))),
    }
}

pub fn write_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud, format: FileFormat) -> Result<()> {
    write_bytes(path.as_ref(), &encode_point_cloud(cloud, format)?)
}

pub fn encode_point_cloud(cloud: &PointCloud, format: FileFormat) -> Result<Vec<u8>> {
    cloud.validate()?;
    match format {
        FileFormat::PlyAscii => ply::encode(cloud, None, false),
        FileFormat::PlyBinary => ply::encode(cloud, None, true),
        FileFormat::PcdAscii => Ok(pcd::encode(cloud)),
        other => Err(Error::invalid(format!("cannot write a point cloud as {other:?}"))),
    }
}

pub fn read_triangle_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    if !FileFormat::from_path(path)?.is_ply() {
        return Err(Error::invalid("triangle meshes are read from PLY files"));
    }
    parse_triangle_mesh(&read_bytes(path)?)
}

/// Parses PLY bytes holding `vertex` and optional `face` elements.
pub fn parse_triangle_mesh(bytes: &[u8]) -> Result<TriangleMesh> {
    let parsed = ply::parse(bytes)?;
    Ok(TriangleMesh {
        vertices: parsed.cloud.points,
        triangles: parsed.triangles,
        vertex_normals: parsed.cloud.normals,
        vertex_colors: parsed.cloud.colors,
        triangle_normals: Vec::new(),
    })
}

pub fn write_triangle_mesh(path: impl AsRef<Path>, mesh: &TriangleMesh, format: FileFormat) -> Result<()> {
    write_bytes(path.as_ref(), &encode_triangle_mesh(mesh, format)?)
}

pub fn encode_triangle_mesh(mesh: &TriangleMesh, format: FileFormat) -> Result<Vec<u8>> {
    mesh.validate()?;
    let cloud = PointCloud {
        points: mesh.vertices.clone(),
        normals: mesh.vertex_normals.clone(),
        colors: mesh.vertex_colors.clone(),
    };
    match format {
        FileFormat::PlyAscii => ply::encode(&cloud, Some(&mesh.triangles), false),
        FileFormat::PlyBinary => ply::encode(&cloud, Some(&mesh.triangles), true),
        other => Err(Error::invalid(format!("cannot write a mesh as {other:?}"))),
    }
}

/// Reads a PGM (1 channel) or PPM (3 channel) image.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let format = FileFormat::from_path(path)?;
    if !matches!(format, FileFormat::Pgm | FileFormat::Ppm) {
        return Err(Error::invalid(format!("{} is not a PGM/PPM path", path.display())));
    }
    let image = netpbm::parse(&read_bytes(path)?)?;
    let expected = if format == FileFormat::Pgm { 1 } else { 3 };
    if image.channels() != expected {
        return Err(parse_error(
            "netpbm",
            Location::Byte(0),
            format!("magic does not match the .{} extension", if expected == 1 { "pgm" } else { "ppm" }),
        ));
    }
    Ok(image)
}

pub fn parse_image(bytes: &[u8]) -> Result<Image> {
    netpbm::parse(bytes)
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    write_bytes(path.as_ref(), &netpbm::encode(image)?)
}

pub fn encode_image(image: &Image) -> Result<Vec<u8>> {
    netpbm::encode(image)
}

pub fn read_pose_graph(path: impl AsRef<Path>) -> Result<PoseGraph> {
    pose_graph::parse(&read_bytes(path.as_ref())?)
}

pub fn write_pose_graph(path: impl AsRef<Path>, graph: &PoseGraph) -> Result<()> {
    write_bytes(path.as_ref(), pose_graph::encode(graph)?.as_bytes())
}

pub fn parse_pose_graph(bytes: &[u8]) -> Result<PoseGraph> {
    pose_graph::parse(bytes)
}

pub fn encode_pose_graph(graph: &PoseGraph) -> Result<String> {
    pose_graph::encode(graph)
}

pub fn read_feature(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    feature::parse(&read_bytes(path.as_ref())?)
}

pub fn write_feature(path: impl AsRef<Path>, features: &FeatureMatrix) -> Result<()> {
    write_bytes(path.as_ref(), feature::encode(features).as_bytes())
}

pub fn parse_feature(bytes: &[u8]) -> Result<FeatureMatrix> {
    feature::parse(bytes)
}

pub fn encode_feature(features: &FeatureMatrix) -> String {
    feature::encode(features)
}

/// Reads `width height fx fy cx cy`, whitespace separated.
pub fn read_intrinsic(path: impl AsRef<Path>) -> Result<PinholeCameraIntrinsic> {
    parse_intrinsic(&read_bytes(path.as_ref())?)
}

pub fn parse_intrinsic(bytes: &[u8]) -> Result<PinholeCameraIntrinsic> {
    const FORMAT: &str = "intrinsic";
    let lines = text_lines(FORMAT, bytes)?;
    let mut values = Vec::with_capacity(6);
    let mut last_line = 1;
    for &(n, line) in &lines {
        for token in line.split_ascii_whitespace() {
            if values.len() == 6 {
                return Err(parse_error(FORMAT, Location::Line(n), "more than 6 values"));
            }
            let v = parse_f64(FORMAT, n, token)?;
            if !v.is_finite() {
                return Err(parse_error(FORMAT, Location::Line(n), "non-finite value"));
            }
            values.push(v);
            last_line = n;
        }
    }
    if values.len() < 6 {
        return Err(parse_error(FORMAT, Location::Line(last_line), format!("expected 6 values, found {}", values.len())));
    }
    let dim = |v: f64, n: &str| {
        if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(parse_error(FORMAT, Location::Line(1), format!("{n} must be a positive integer, found {v}")))
        }
    };
    PinholeCameraIntrinsic::new(dim(values[0], "width")?, dim(values[1], "height")?, values[2], values[3], values[4], values[5])
        .map_err(|e| parse_error(FORMAT, Location::Line(last_line), e.to_string()))
}

pub fn encode_intrinsic(k: &PinholeCameraIntrinsic) -> String {
    format!("{} {} {} {} {} {}\n", k.width, k.height, fmt_f64(k.fx), fmt_f64(k.fy), fmt_f64(k.cx), fmt_f64(k.cy))
}

/// Splits text into `(1-based line number, line)` without line terminators.
pub(crate) fn text_lines<'a>(format: &'static str, bytes: &'a [u8]) -> Result<Vec<(usize, &'a str)>> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        parse_error(format, Location::Line(line), "invalid UTF-8")
    })?;
    Ok(text
        .split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .collect())
}

pub(crate) fn parse_f64(format: &'static str, line: usize, token: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .map_err(|_| parse_error(format, Location::Line(line), format!("expected a number, found {token:?}")))
}
