//! Fragment-based scene reconstruction from an RGB-D sequence.
//!
//! 1. **Fragments.** The sequence is cut into windows of `fragment_size`
//!    frames; consecutive windows share one frame. Inside a window,
//!    consecutive frames are aligned by point-to-plane ICP started at the
//!    identity (geometric odometry), frames `loop_skip` apart add uncertain
//!    edges, the pose graph is optimized, and the frames are fused into a
//!    TSDF whose surface points form the fragment cloud.
//! 2. **Global alignment.** Non-adjacent fragment pairs are matched with
//!    FPFH features and RANSAC (uncertain edges, kept above `pair_fitness`);
//!    adjacent fragments are aligned by ICP started from the shared frame's
//!    pose (certain edges). The graph is optimized, every surviving edge is
//!    refined by ICP from the optimized poses, and the graph is optimized
//!    again.
//! 3. **Integration.** Every frame is fused with its composed pose into one
//!    TSDF and the final mesh is extracted.
//!
//! Edge information matrices are `inlier count * I`. Poses are expressed in
//! the camera frame of the first valid frame. Every stochastic choice is
//! seeded from `config.seed`, and all parallel work merges in index order,
//! so results are bit-identical across runs and thread counts.

mod config;
mod sequence;

pub use config::PipelineConfig;
pub use sequence::{frame_paths, load_sequence, RgbdSequence};

use crate::error::{Error, Result};
use crate::features::compute_fpfh_feature;
use crate::geometry::{
    create_point_cloud_from_rgbd, estimate_normals, orient_normals_towards_viewpoint, voxel_down_sample, PointCloud,
    RigidTransform, TriangleMesh,
};
use crate::integration::{extract_point_cloud, extract_triangle_mesh, TsdfVolume};
use crate::io::{self, FileFormat};
use crate::optim::{global_optimization, GlobalOptimizationOption, PoseGraph, PoseGraphEdge};
use crate::parallel::with_threads;
use crate::registration::{
    registration_icp, registration_ransac_based_on_feature_matching, CorrespondenceChecker, IcpCriteria, IcpMethod,
    RansacCriteria, RegistrationResult,
};
use crate::spatial::SearchParam;
use nalgebra::{Matrix6, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

pub const REPORT_FORMAT: &str = "r3d-reconstruction-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Fragment {
    /// Sequence indices of the valid frames, in order; node `k` of `graph`
    /// is frame `frames[k]`.
    pub frames: Vec<usize>,
    /// Optimized frame poses relative to the fragment's first frame.
    pub graph: PoseGraph,
    /// Surface points of the fragment TSDF, in the fragment frame.
    pub cloud: PointCloud,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairReport {
    pub source: usize,
    pub target: usize,
    /// `"ransac"`, `"icp"` or `"refine"`.
    pub method: String,
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FragmentReport {
    pub frames: Vec<usize>,
    pub odometry_fitness: Vec<f64>,
    pub loop_edges: usize,
    pub pruned_edges: usize,
    pub cloud_points: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct StepTimings {
    pub fragments_s: f64,
    pub global_s: f64,
    pub integration_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub config: PipelineConfig,
    pub frames: usize,
    pub skipped_frames: Vec<usize>,
    pub fragments: Vec<FragmentReport>,
    pub pairs: Vec<PairReport>,
    pub pruned_pairs: Vec<(usize, usize)>,
    /// Row-major 4x4 fragment poses.
    pub fragment_poses: Vec<Vec<f64>>,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    pub timings: StepTimings,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub fragments: Vec<Fragment>,
    /// Optimized fragment poses.
    pub global_graph: PoseGraph,
    /// Final pose of every frame; `None` for skipped frames.
    pub frame_poses: Vec<Option<RigidTransform>>,
    pub mesh: TriangleMesh,
    pub report: Report,
}

/// Frame index windows `[k F, min((k + 1) F, n - 1)]`.
pub fn fragment_windows(frames: usize, fragment_size: usize) -> Vec<std::ops::RangeInclusive<usize>> {
    if frames == 0 {
        return Vec::new();
    }
    if frames <= fragment_size {
        return vec![0..=frames - 1];
    }
    (0..)
        .map(|k| k * fragment_size)
        .take_while(|&start| start < frames - 1)
        .map(|start| start..=(start + fragment_size).min(frames - 1))
        .collect()
}

fn information(result: &RegistrationResult) -> Matrix6<f64> {
    Matrix6::identity() * result.correspondences.len() as f64
}

fn icp_criteria() -> IcpCriteria {
    IcpCriteria::default()
}

/// Downsampled, normal-annotated camera-frame cloud of one frame.
fn frame_cloud(seq: &RgbdSequence, frame: usize, config: &PipelineConfig) -> Result<PointCloud> {
    let rgbd = seq.frames[frame].as_ref().expect("valid frame");
    let full = create_point_cloud_from_rgbd(rgbd, &seq.intrinsic)?;
    let mut cloud = voxel_down_sample(&full, config.tsdf_voxel_size)?;
    if cloud.len() < 3 {
        return Err(Error::degenerate(format!("frame {frame} has fewer than 3 points after downsampling")));
    }
    estimate_normals(
        &mut cloud,
        SearchParam::Hybrid {
            radius: config.normal_radius,
            max_nn: config.normal_max_nn,
        },
    )?;
    orient_normals_towards_viewpoint(&mut cloud, &Vector3::zeros())?;
    Ok(cloud)
}

fn fuse(
    seq: &RgbdSequence,
    frames: &[(usize, RigidTransform)],
    clouds: &[Option<PointCloud>],
    config: &PipelineConfig,
) -> Result<TsdfVolume> {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for (f, pose) in frames {
        for p in &clouds[*f].as_ref().expect("valid frame").points {
            let w = pose.apply_point(p);
            min = min.inf(&w);
            max = max.sup(&w);
        }
    }
    let margin = Vector3::repeat(config.sdf_trunc + config.tsdf_voxel_size);
    let mut volume = TsdfVolume::covering(&(min - margin), &(max + margin), config.tsdf_voxel_size, config.sdf_trunc)?;
    for (f, pose) in frames {
        volume.integrate(seq.frames[*f].as_ref().expect("valid frame"), &seq.intrinsic, &pose.inverse())?;
    }
    Ok(volume)
}

fn build_fragment(
    seq: &RgbdSequence,
    window: std::ops::RangeInclusive<usize>,
    clouds: &[Option<PointCloud>],
    config: &PipelineConfig,
) -> Result<(Fragment, FragmentReport)> {
    let frames: Vec<usize> = window.clone().filter(|&f| clouds[f].is_some()).collect();
    if frames.is_empty() {
        return Err(Error::degenerate(format!("frames {window:?} have no valid depth")));
    }
    let cloud = |k: usize| clouds[frames[k]].as_ref().expect("valid frame");
    let mut poses = vec![RigidTransform::identity()];
    let mut edges = Vec::new();
    let mut odometry_fitness = Vec::new();
    for k in 1..frames.len() {
        let r = registration_icp(
            cloud(k),
            cloud(k - 1),
            config.odometry_distance,
            &RigidTransform::identity(),
            IcpMethod::PointToPlane,
            icp_criteria(),
        )?;
        if r.correspondences.is_empty() {
            return Err(Error::degenerate(format!("odometry failed between frames {} and {}", frames[k - 1], frames[k])));
        }
        odometry_fitness.push(r.fitness);
        poses.push(poses[k - 1] * r.transformation);
        edges.push(PoseGraphEdge::new(k - 1, k, r.transformation, information(&r), false));
    }
    let mut loop_edges = 0;
    for a in 0..frames.len() {
        let b = a + config.loop_skip;
        if config.loop_skip < 2 || b >= frames.len() {
            continue;
        }
        let init = poses[a].inverse() * poses[b];
        let r = registration_icp(cloud(b), cloud(a), config.odometry_distance, &init, IcpMethod::PointToPlane, icp_criteria())?;
        if !r.correspondences.is_empty() {
            edges.push(PoseGraphEdge::new(a, b, r.transformation, information(&r), true));
            loop_edges += 1;
        }
    }
    let graph = PoseGraph { nodes: poses, edges };
    let option = GlobalOptimizationOption {
        max_correspondence_distance: config.odometry_distance,
        ..Default::default()
    };
    let optimized = global_optimization(&graph, &option)?;
    let posed: Vec<(usize, RigidTransform)> = frames.iter().copied().zip(optimized.graph.nodes.iter().copied()).collect();
    let volume = fuse(seq, &posed, clouds, config)?;
    let fragment_cloud = extract_point_cloud(&volume)?;
    let report = FragmentReport {
        frames: frames.clone(),
        odometry_fitness,
        loop_edges,
        pruned_edges: optimized.pruned.len(),
        cloud_points: fragment_cloud.len(),
    };
    Ok((
        Fragment {
            frames,
            graph: optimized.graph,
            cloud: fragment_cloud,
        },
        report,
    ))
}

/// Downsampled fragment cloud with PCA normals oriented like the TSDF
/// gradient normals, and its FPFH features.
fn matching_cloud(cloud: &PointCloud, config: &PipelineConfig) -> Result<(PointCloud, crate::features::FeatureMatrix)> {
    let mut down = voxel_down_sample(cloud, config.voxel_size)?;
    let gradient = down.normals.clone();
    estimate_normals(
        &mut down,
        SearchParam::Hybrid {
            radius: config.normal_radius,
            max_nn: config.normal_max_nn,
        },
    )?;
    for (n, g) in down.normals.iter_mut().zip(&gradient) {
        if n.dot(g) < 0.0 {
            *n = -*n;
        }
    }
    let features = compute_fpfh_feature(
        &down,
        SearchParam::Hybrid {
            radius: config.fpfh_radius,
            max_nn: config.fpfh_max_nn,
        },
    )?;
    Ok((down, features))
}

fn pair_report(source: usize, target: usize, method: &str, r: &RegistrationResult, accepted: bool) -> PairReport {
    PairReport {
        source,
        target,
        method: method.into(),
        fitness: r.fitness,
        inlier_rmse: r.inlier_rmse,
        accepted,
    }
}

struct GlobalAlignment {
    graph: PoseGraph,
    pairs: Vec<PairReport>,
    pruned: Vec<(usize, usize)>,
}

fn align_fragments(fragments: &[Fragment], config: &PipelineConfig) -> Result<GlobalAlignment> {
    let n = fragments.len();
    if n == 1 {
        return Ok(GlobalAlignment {
            graph: PoseGraph {
                nodes: vec![RigidTransform::identity()],
                edges: Vec::new(),
            },
            pairs: Vec::new(),
            pruned: Vec::new(),
        });
    }
    let matching: Vec<_> = fragments
        .par_iter()
        .map(|f| matching_cloud(&f.cloud, config))
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results: Vec<(usize, usize, RegistrationResult, bool)> = pairs
        .par_iter()
        .enumerate()
        .map(|(p, &(i, j))| {
            let ((src, src_f), (tgt, tgt_f)) = (&matching[j], &matching[i]);
            if j == i + 1 {
                let shared = fragments[i].graph.nodes.last().copied().unwrap_or_else(RigidTransform::identity);
                let init = if fragments[i].frames.last() == fragments[j].frames.first() {
                    shared
                } else {
                    RigidTransform::identity()
                };
                let r = registration_icp(src, tgt, config.icp_distance, &init, IcpMethod::PointToPlane, icp_criteria())?;
                Ok((i, j, r, false))
            } else {
                let r = registration_ransac_based_on_feature_matching(
                    src,
                    tgt,
                    src_f,
                    tgt_f,
                    config.ransac_distance,
                    config.ransac_n,
                    &[
                        CorrespondenceChecker::EdgeLength(config.edge_similarity),
                        CorrespondenceChecker::Distance(config.ransac_distance),
                    ],
                    RansacCriteria {
                        max_iteration: config.ransac_max_iteration,
                        max_validation: config.ransac_max_validation,
                    },
                    config.seed.wrapping_add(p as u64),
                )?;
                Ok((i, j, r, true))
            }
        })
        .collect::<Result<_>>()?;

    let mut nodes = vec![RigidTransform::identity(); n];
    let mut edges = Vec::new();
    let mut reports = Vec::new();
    for (i, j, r, uncertain) in &results {
        let method = if *uncertain { "ransac" } else { "icp" };
        let accepted = if *uncertain {
            r.fitness >= config.pair_fitness && !r.correspondences.is_empty()
        } else {
            if r.correspondences.is_empty() {
                return Err(Error::degenerate(format!("fragments {i} and {j} do not overlap")));
            }
            nodes[*j] = nodes[*i] * r.transformation;
            true
        };
        if accepted {
            edges.push(PoseGraphEdge::new(*i, *j, r.transformation, information(r), *uncertain));
        }
        reports.push(pair_report(*i, *j, method, r, accepted));
    }
    let option = GlobalOptimizationOption {
        max_correspondence_distance: config.ransac_distance,
        ..Default::default()
    };
    let first = global_optimization(&PoseGraph { nodes, edges }, &option)?;
    let mut pruned: Vec<(usize, usize)> = first.pruned.iter().map(|&k| (first.graph.edges[k].source, first.graph.edges[k].target)).collect();
    let kept: Vec<&PoseGraphEdge> = first
        .graph
        .edges
        .iter()
        .enumerate()
        .filter(|(k, _)| !first.pruned.contains(k))
        .map(|(_, e)| e)
        .collect();
    let poses = &first.graph.nodes;
    let refined: Vec<RegistrationResult> = kept
        .par_iter()
        .map(|e| {
            let init = poses[e.source].inverse() * poses[e.target];
            registration_icp(
                &matching[e.target].0,
                &matching[e.source].0,
                config.icp_distance,
                &init,
                IcpMethod::PointToPlane,
                icp_criteria(),
            )
        })
        .collect::<Result<_>>()?;
    let mut edges = Vec::new();
    for (e, r) in kept.iter().zip(&refined) {
        let accepted = !r.correspondences.is_empty();
        reports.push(pair_report(e.source, e.target, "refine", r, accepted));
        if accepted {
            edges.push(PoseGraphEdge::new(e.source, e.target, r.transformation, information(r), e.uncertain));
        } else if !e.uncertain {
            return Err(Error::degenerate(format!("refinement lost fragments {} and {}", e.source, e.target)));
        }
    }
    let second = global_optimization(
        &PoseGraph {
            nodes: first.graph.nodes.clone(),
            edges,
        },
        &option,
    )?;
    pruned.extend(second.pruned.iter().map(|&k| (second.graph.edges[k].source, second.graph.edges[k].target)));
    Ok(GlobalAlignment {
        graph: second.graph,
        pairs: reports,
        pruned,
    })
}

/// Runs the three reconstruction steps on a loaded sequence.
pub fn reconstruct(seq: &RgbdSequence, config: &PipelineConfig) -> Result<Reconstruction> {
    config.validate()?;
    seq.intrinsic.validate()?;
    with_threads(config.workers, || run(seq, config))
}

fn run(seq: &RgbdSequence, config: &PipelineConfig) -> Result<Reconstruction> {
    let n = seq.frames.len();
    let skipped_frames: Vec<usize> = (0..n).filter(|&f| seq.frames[f].is_none()).collect();
    if skipped_frames.len() == n {
        return Err(Error::degenerate("no frame has valid depth"));
    }

    let t = Instant::now();
    log::info!("step 1: {n} frames, fragment size {}", config.fragment_size);
    let clouds: Vec<Option<PointCloud>> = (0..n)
        .into_par_iter()
        .map(|f| seq.frames[f].as_ref().map(|_| frame_cloud(seq, f, config)).transpose())
        .collect::<Result<_>>()?;
    let windows = fragment_windows(n, config.fragment_size);
    let built: Vec<(Fragment, FragmentReport)> = windows
        .into_par_iter()
        .map(|w| build_fragment(seq, w, &clouds, config))
        .collect::<Result<_>>()?;
    let (fragments, fragment_reports): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    let fragments_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    log::info!("step 2: aligning {} fragments", fragments.len());
    let global = align_fragments(&fragments, config)?;
    let global_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    log::info!("step 3: integrating");
    let mut frame_poses: Vec<Option<RigidTransform>> = vec![None; n];
    for (k, fragment) in fragments.iter().enumerate() {
        for (f, local) in fragment.frames.iter().zip(&fragment.graph.nodes) {
            if frame_poses[*f].is_none() {
                frame_poses[*f] = Some(global.graph.nodes[k] * *local);
            }
        }
    }
    let posed: Vec<(usize, RigidTransform)> = frame_poses.iter().enumerate().filter_map(|(f, p)| p.map(|p| (f, p))).collect();
    let volume = fuse(seq, &posed, &clouds, config)?;
    let mesh = extract_triangle_mesh(&volume)?;
    let integration_s = t.elapsed().as_secs_f64();

    let report = Report {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        config: config.clone(),
        frames: n,
        skipped_frames,
        fragments: fragment_reports,
        pairs: global.pairs,
        pruned_pairs: global.pruned,
        fragment_poses: global.graph.nodes.iter().map(|p| p.to_row_major().to_vec()).collect(),
        mesh_vertices: mesh.vertices.len(),
        mesh_triangles: mesh.triangles.len(),
        timings: StepTimings {
            fragments_s,
            global_s,
            integration_s,
        },
    };
    Ok(Reconstruction {
        fragments,
        global_graph: global.graph,
        frame_poses,
        mesh,
        report,
    })
}

/// Writes `mesh.ply`, `global_posegraph.json`, `report.json` and, per
/// fragment, `fragments/fragment_NNN.ply` and
/// `fragments/fragment_NNN_posegraph.json` under `dir`.
pub fn write_reconstruction(dir: &Path, rec: &Reconstruction) -> Result<()> {
    let fragments_dir = dir.join("fragments");
    std::fs::create_dir_all(&fragments_dir).map_err(|e| Error::io(&fragments_dir, e))?;
    for (k, fragment) in rec.fragments.iter().enumerate() {
        io::write_point_cloud(fragments_dir.join(format!("fragment_{k:03}.ply")), &fragment.cloud, FileFormat::PlyBinary)?;
        io::write_pose_graph(fragments_dir.join(format!("fragment_{k:03}_posegraph.json")), &fragment.graph)?;
    }
    io::write_pose_graph(dir.join("global_posegraph.json"), &rec.global_graph)?;
    io::write_triangle_mesh(dir.join("mesh.ply"), &rec.mesh, FileFormat::PlyBinary)?;
    let path = dir.join("report.json");
    let text = serde_json::to_string_pretty(&rec.report).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
