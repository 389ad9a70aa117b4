mod common;

use common::*;
use nalgebra::Vector3;
use r3d::io::{self, FileFormat};
use r3d::{PointCloud, TriangleMesh};
use std::time::Duration;

fn sample_cloud() -> PointCloud {
    let mut rng = rng(5);
    let mut cloud = PointCloud::from_points(random_points(&mut rng, 50, 3.0));
    cloud.normals = random_points(&mut rng, 50, 1.0).iter().map(|n| n.normalize()).collect();
    cloud
}

#[test]
fn every_point_cloud_writer_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = sample_cloud();
    for (name, format) in [("a.ply", FileFormat::PlyAscii), ("b.ply", FileFormat::PlyBinary), ("c.pcd", FileFormat::PcdAscii)] {
        let path = dir.path().join(name);
        io::write_point_cloud(&path, &cloud, format).unwrap();
        assert_eq!(io::read_point_cloud(&path).unwrap(), cloud, "{name}");
    }
}

#[test]
fn mesh_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut mesh = r3d::geometry::icosphere(0.7, 2);
    mesh.vertex_colors = mesh.vertices.iter().map(|v| v.map(|c| (c.abs() * 255.0).round() / 255.0)).collect();
    for format in [FileFormat::PlyAscii, FileFormat::PlyBinary] {
        let path = dir.path().join("m.ply");
        io::write_triangle_mesh(&path, &mesh, format).unwrap();
        let back: TriangleMesh = io::read_triangle_mesh(&path).unwrap();
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(back.triangles, mesh.triangles);
        assert_eq!(back.vertex_normals, mesh.vertex_normals);
        assert_eq!(back.vertex_colors, mesh.vertex_colors);
    }
}

#[test]
fn ten_node_loop_graph_round_trips_bitwise() {
    let case = noisy_loop(10, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    io::write_pose_graph(&path, &case.graph).unwrap();
    assert_eq!(io::read_pose_graph(&path).unwrap(), case.graph);
}

#[test]
fn cross_format_conversion_keeps_coordinates() {
    let cloud = sample_cloud();
    let pcd = io::encode_point_cloud(&cloud, FileFormat::PcdAscii).unwrap();
    let via_pcd = io::parse_point_cloud(&pcd, FileFormat::PcdAscii).unwrap();
    let ply = io::encode_point_cloud(&via_pcd, FileFormat::PlyBinary).unwrap();
    let back = io::parse_point_cloud(&ply, FileFormat::PlyBinary).unwrap();
    for (a, b) in back.points.iter().zip(&cloud.points) {
        assert!((a - b).amax() <= 1e-6 * b.amax().max(1.0));
    }
}

#[test]
fn binary_ply_is_little_endian() {
    let cloud = PointCloud::from_points(vec![Vector3::new(1.0, 0.0, 0.0)]);
    let bytes = io::encode_point_cloud(&cloud, FileFormat::PlyBinary).unwrap();
    let body = &bytes[bytes.len() - 24..];
    assert_eq!(&body[..8], &1.0f64.to_le_bytes());
}

#[test]
fn mutation_fuzz_smoke() {
    let mut rng = rng(1234);
    for (name, seed, kind) in fuzz_seeds() {
        parse_as(kind, &seed).unwrap_or_else(|e| panic!("{name} seed does not parse: {e}"));
        for _ in 0..40 {
            let bytes = mutate(&mut rng, &seed);
            match fuzz_one(kind, bytes.clone(), Duration::from_secs(5)) {
                None => panic!("{name}: parser hung on {:?}", String::from_utf8_lossy(&bytes)),
                Some(FuzzOutcome::Panicked(m)) => panic!("{name}: panic {m} on {:?}", String::from_utf8_lossy(&bytes)),
                Some(FuzzOutcome::Unlocated(m)) => panic!("{name}: unlocated error {m} on {:?}", String::from_utf8_lossy(&bytes)),
                _ => {}
            }
        }
    }
}
