//! `r3d`: command-line front end for the r3d library.
//!
//! Exit status is 0 on success, 1 when processing fails and 2 on usage
//! errors. Diagnostics go to standard error; the register commands print one
//! JSON line with `fitness`, `rmse` and `transform` to standard output.

mod config_flags;

use clap::{Parser, Subcommand, ValueEnum};
use config_flags::ConfigFlags;
use nalgebra::Vector3;
use r3d::features::compute_fpfh_feature;
use r3d::geometry::{create_point_cloud_from_rgbd, estimate_normals, orient_normals_towards_viewpoint, voxel_down_sample};
use r3d::integration::{extract_point_cloud, extract_triangle_mesh};
use r3d::io::{self, FileFormat};
use r3d::optim::{global_optimization, GlobalOptimizationOption};
use r3d::pipeline::{load_sequence, reconstruct, write_reconstruction, PipelineConfig};
use r3d::registration::{
    registration_icp, registration_ransac_based_on_feature_matching, CorrespondenceChecker, IcpCriteria, IcpMethod,
    RansacCriteria,
};
use r3d::synthetic::{read_trajectory, Dataset, DEPTH_SCALE};
use r3d::{Error, FeatureMatrix, PointCloud, RegistrationResult, RigidTransform, SearchParam, TsdfVolume};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "r3d", version, about = "Point-cloud processing, registration and RGB-D reconstruction")]
struct Cli {
    /// Log verbosity: -v for info, -vv for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Voxel-grid downsampling of a point cloud.
    Downsample {
        #[arg(long, default_value_t = 0.05)]
        voxel: f64,
        #[arg(long)]
        ascii: bool,
        input: PathBuf,
        output: PathBuf,
    },
    /// PCA normal estimation.
    Normals {
        #[command(flatten)]
        search: NormalSearch,
        /// Orient normals towards this point, given as "x,y,z".
        #[arg(long, value_parser = parse_vector)]
        viewpoint: Option<Vector3<f64>>,
        #[arg(long)]
        ascii: bool,
        input: PathBuf,
        output: PathBuf,
    },
    /// FPFH descriptors of a cloud with normals, written as text.
    Fpfh {
        #[arg(long, default_value_t = 0.25)]
        radius: f64,
        #[arg(long, default_value_t = 100)]
        max_nn: usize,
        input: PathBuf,
        output: PathBuf,
    },
    /// Feature-based RANSAC registration of source onto target.
    RegisterGlobal(RegisterGlobal),
    /// ICP refinement of source onto target.
    RegisterIcp(RegisterIcp),
    /// Robust pose-graph optimization with line-process pruning.
    PosegraphOptimize {
        #[arg(long, default_value_t = 0.075)]
        distance: f64,
        #[arg(long, default_value_t = 0.25)]
        preference_loop_closure: f64,
        #[arg(long, default_value_t = 100)]
        max_iteration: usize,
        input: PathBuf,
        output: PathBuf,
    },
    /// TSDF fusion of a dataset directory along a known trajectory.
    Integrate(Integrate),
    /// Converts point clouds (PLY, PCD) and meshes (PLY) between encodings.
    Convert {
        /// Write ASCII instead of binary PLY.
        #[arg(long)]
        ascii: bool,
        input: PathBuf,
        output: PathBuf,
    },
    /// Runs the fragment / global alignment / integration pipeline.
    Reconstruct {
        /// `key = value` settings file; flags take precedence over it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        settings: ConfigFlags,
        dataset: PathBuf,
        output: PathBuf,
    },
    /// Renders the synthetic sphere-and-planes dataset with its trajectory.
    Synth {
        #[arg(long, default_value_t = 60)]
        frames: usize,
        output: PathBuf,
    },
}

#[derive(clap::Args)]
struct NormalSearch {
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    #[arg(long, default_value_t = 30)]
    max_nn: usize,
}

impl NormalSearch {
    fn param(&self) -> SearchParam {
        SearchParam::Hybrid {
            radius: self.radius,
            max_nn: self.max_nn,
        }
    }
}

#[derive(clap::Args)]
struct RegisterGlobal {
    /// Downsample both clouds with this voxel size first.
    #[arg(long)]
    voxel: Option<f64>,
    /// Precomputed source descriptors; computed when absent.
    #[arg(long, requires = "target_feature", conflicts_with = "voxel")]
    source_feature: Option<PathBuf>,
    #[arg(long, requires = "source_feature")]
    target_feature: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    normal_radius: f64,
    #[arg(long, default_value_t = 30)]
    normal_max_nn: usize,
    #[arg(long, default_value_t = 0.25)]
    fpfh_radius: f64,
    #[arg(long, default_value_t = 100)]
    fpfh_max_nn: usize,
    /// Maximum correspondence distance.
    #[arg(long, default_value_t = 0.075)]
    distance: f64,
    #[arg(long, default_value_t = 4)]
    ransac_n: usize,
    #[arg(long, default_value_t = 0.9)]
    edge_similarity: f64,
    #[arg(long, default_value_t = 4_000_000)]
    max_iteration: usize,
    #[arg(long, default_value_t = 500)]
    max_validation: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the transformed source cloud here.
    #[arg(long)]
    aligned: Option<PathBuf>,
    source: PathBuf,
    target: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    PointToPoint,
    PointToPlane,
}

#[derive(clap::Args)]
struct RegisterIcp {
    /// Maximum correspondence distance.
    #[arg(long, default_value_t = 0.02)]
    distance: f64,
    #[arg(long, value_enum, default_value_t = Method::PointToPoint)]
    method: Method,
    /// Initial transform: a file with 16 row-major numbers or a register
    /// command's JSON line.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    max_iteration: usize,
    #[arg(long, default_value_t = 1e-6)]
    relative_fitness: f64,
    #[arg(long, default_value_t = 1e-6)]
    relative_rmse: f64,
    /// Estimate target normals with this radius when the target has none.
    #[arg(long, default_value_t = 0.1)]
    normal_radius: f64,
    #[arg(long, default_value_t = 30)]
    normal_max_nn: usize,
    #[arg(long)]
    aligned: Option<PathBuf>,
    source: PathBuf,
    target: PathBuf,
}

#[derive(clap::Args)]
struct Integrate {
    /// Camera-to-world poses, 16 row-major numbers per frame. Defaults to
    /// `<dataset>/trajectory.txt`.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    voxel: f64,
    #[arg(long, default_value_t = 0.04)]
    sdf_trunc: f64,
    #[arg(long, default_value_t = 1000.0)]
    depth_scale: f64,
    #[arg(long, default_value_t = 3.0)]
    depth_trunc: f64,
    /// Write the surface point cloud instead of the mesh.
    #[arg(long)]
    point_cloud: bool,
    dataset: PathBuf,
    output: PathBuf,
}

fn parse_vector(text: &str) -> Result<Vector3<f64>, String> {
    let values: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    match values[..] {
        [x, y, z] => Ok(Vector3::new(x, y, z)),
        _ => Err("expected three comma-separated numbers".into()),
    }
}

fn ply_format(ascii: bool) -> FileFormat {
    if ascii {
        FileFormat::PlyAscii
    } else {
        FileFormat::PlyBinary
    }
}

/// Output format from the extension, with `ascii` selecting PLY encoding.
fn cloud_format(path: &Path, ascii: bool) -> r3d::Result<FileFormat> {
    match FileFormat::from_path(path)? {
        FileFormat::PlyBinary => Ok(ply_format(ascii)),
        FileFormat::PcdAscii => Ok(FileFormat::PcdAscii),
        _ => Err(Error::InvalidArgument(format!("{} is not a point-cloud file", path.display()))),
    }
}

fn result_line(result: &RegistrationResult) -> String {
    serde_json::json!({
        "fitness": result.fitness,
        "rmse": result.inlier_rmse,
        "correspondences": result.correspondences.len(),
        "transform": result.transformation.to_row_major().to_vec(),
    })
    .to_string()
}

fn read_transform(path: &Path) -> r3d::Result<RigidTransform> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let values: Vec<f64> = match serde_json::from_str::<serde_json::Value>(&text) {
        Ok(serde_json::Value::Object(map)) => map
            .get("transform")
            .and_then(|t| serde_json::from_value(t.clone()).ok())
            .ok_or_else(|| Error::InvalidArgument(format!("{}: no numeric \"transform\" array", path.display())))?,
        _ => text
            .split_ascii_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?,
    };
    RigidTransform::from_row_major(&values)
}

fn ensure_normals(cloud: &mut PointCloud, search: SearchParam) -> r3d::Result<()> {
    if !cloud.has_normals() {
        estimate_normals(cloud, search)?;
    }
    Ok(())
}

fn register_global(args: &RegisterGlobal) -> r3d::Result<()> {
    let mut source = io::read_point_cloud(&args.source)?;
    let mut target = io::read_point_cloud(&args.target)?;
    if let Some(voxel) = args.voxel {
        source = voxel_down_sample(&source, voxel)?;
        target = voxel_down_sample(&target, voxel)?;
        log::info!("downsampled to {} and {} points", source.len(), target.len());
    }
    let (source_feature, target_feature): (FeatureMatrix, FeatureMatrix) =
        match (&args.source_feature, &args.target_feature) {
            (Some(s), Some(t)) => (io::read_feature(s)?, io::read_feature(t)?),
            _ => {
                let normals = SearchParam::Hybrid {
                    radius: args.normal_radius,
                    max_nn: args.normal_max_nn,
                };
                let fpfh = SearchParam::Hybrid {
                    radius: args.fpfh_radius,
                    max_nn: args.fpfh_max_nn,
                };
                ensure_normals(&mut source, normals)?;
                ensure_normals(&mut target, normals)?;
                (compute_fpfh_feature(&source, fpfh)?, compute_fpfh_feature(&target, fpfh)?)
            }
        };
    let checkers = [
        CorrespondenceChecker::EdgeLength(args.edge_similarity),
        CorrespondenceChecker::Distance(args.distance),
    ];
    let result = registration_ransac_based_on_feature_matching(
        &source,
        &target,
        &source_feature,
        &target_feature,
        args.distance,
        args.ransac_n,
        &checkers,
        RansacCriteria {
            max_iteration: args.max_iteration,
            max_validation: args.max_validation,
        },
        args.seed,
    )?;
    if let Some(path) = &args.aligned {
        io::write_point_cloud(path, &source.transform(&result.transformation), cloud_format(path, false)?)?;
    }
    println!("{}", result_line(&result));
    Ok(())
}

fn register_icp(args: &RegisterIcp) -> r3d::Result<()> {
    let source = io::read_point_cloud(&args.source)?;
    let mut target = io::read_point_cloud(&args.target)?;
    let method = match args.method {
        Method::PointToPoint => IcpMethod::PointToPoint,
        Method::PointToPlane => {
            ensure_normals(
                &mut target,
                SearchParam::Hybrid {
                    radius: args.normal_radius,
                    max_nn: args.normal_max_nn,
                },
            )?;
            IcpMethod::PointToPlane
        }
    };
    let init = match &args.init {
        Some(path) => read_transform(path)?,
        None => RigidTransform::identity(),
    };
    let criteria = IcpCriteria {
        max_iteration: args.max_iteration,
        relative_fitness: args.relative_fitness,
        relative_rmse: args.relative_rmse,
    };
    let result = registration_icp(&source, &target, args.distance, &init, method, criteria)?;
    if let Some(path) = &args.aligned {
        io::write_point_cloud(path, &source.transform(&result.transformation), cloud_format(path, false)?)?;
    }
    println!("{}", result_line(&result));
    Ok(())
}

fn integrate(args: &Integrate) -> r3d::Result<()> {
    let config = PipelineConfig {
        tsdf_voxel_size: args.voxel,
        sdf_trunc: args.sdf_trunc,
        depth_scale: args.depth_scale,
        depth_trunc: args.depth_trunc,
        ..Default::default()
    };
    let seq = load_sequence(&args.dataset, &config)?;
    let trajectory_path = args.trajectory.clone().unwrap_or_else(|| args.dataset.join("trajectory.txt"));
    let trajectory = read_trajectory(&trajectory_path)?;
    if trajectory.len() != seq.frames.len() {
        return Err(Error::InvalidArgument(format!(
            "{} has {} poses for {} frames",
            trajectory_path.display(),
            trajectory.len(),
            seq.frames.len()
        )));
    }
    let frames: Vec<_> = seq.frames.iter().zip(&trajectory).filter_map(|(f, pose)| f.as_ref().map(|f| (f, pose))).collect();
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for (rgbd, pose) in &frames {
        for p in create_point_cloud_from_rgbd(rgbd, &seq.intrinsic)?.points {
            let w = pose.apply_point(&p);
            min = min.inf(&w);
            max = max.sup(&w);
        }
    }
    if frames.is_empty() {
        return Err(Error::DegenerateInput("no frame has valid depth".into()));
    }
    let margin = Vector3::repeat(args.sdf_trunc + args.voxel);
    let mut volume = TsdfVolume::covering(&(min - margin), &(max + margin), args.voxel, args.sdf_trunc)?;
    log::info!("integrating {} frames into a {}^3 volume", frames.len(), volume.resolution());
    for (rgbd, pose) in &frames {
        volume.integrate(rgbd, &seq.intrinsic, &pose.inverse())?;
    }
    if args.point_cloud {
        io::write_point_cloud(&args.output, &extract_point_cloud(&volume)?, cloud_format(&args.output, false)?)
    } else {
        io::write_triangle_mesh(&args.output, &extract_triangle_mesh(&volume)?, FileFormat::PlyBinary)
    }
}

fn convert(input: &Path, output: &Path, ascii: bool) -> r3d::Result<()> {
    let out_format = cloud_format(output, ascii)?;
    if FileFormat::from_path(input)? == FileFormat::PlyBinary {
        let mesh = io::read_triangle_mesh(input)?;
        if !mesh.triangles.is_empty() {
            if out_format == FileFormat::PcdAscii {
                return Err(Error::InvalidArgument(format!("{} is a mesh; PCD holds point clouds only", input.display())));
            }
            return io::write_triangle_mesh(output, &mesh, out_format);
        }
    }
    io::write_point_cloud(output, &io::read_point_cloud(input)?, out_format)
}

fn run(command: Command) -> r3d::Result<()> {
    match command {
        Command::Downsample {
            voxel,
            ascii,
            input,
            output,
        } => {
            let cloud = io::read_point_cloud(&input)?;
            let down = voxel_down_sample(&cloud, voxel)?;
            log::info!("{} -> {} points", cloud.len(), down.len());
            io::write_point_cloud(&output, &down, cloud_format(&output, ascii)?)
        }
        Command::Normals {
            search,
            viewpoint,
            ascii,
            input,
            output,
        } => {
            let mut cloud = io::read_point_cloud(&input)?;
            let sparse = estimate_normals(&mut cloud, search.param())?;
            if sparse > 0 {
                log::warn!("{sparse} points had fewer than three neighbors; their normal defaults to +z");
            }
            if let Some(v) = viewpoint {
                orient_normals_towards_viewpoint(&mut cloud, &v)?;
            }
            io::write_point_cloud(&output, &cloud, cloud_format(&output, ascii)?)
        }
        Command::Fpfh {
            radius,
            max_nn,
            input,
            output,
        } => {
            let cloud = io::read_point_cloud(&input)?;
            let features = compute_fpfh_feature(&cloud, SearchParam::Hybrid { radius, max_nn })?;
            io::write_feature(&output, &features)
        }
        Command::RegisterGlobal(args) => register_global(&args),
        Command::RegisterIcp(args) => register_icp(&args),
        Command::PosegraphOptimize {
            distance,
            preference_loop_closure,
            max_iteration,
            input,
            output,
        } => {
            let graph = io::read_pose_graph(&input)?;
            let option = GlobalOptimizationOption {
                max_correspondence_distance: distance,
                preference_loop_closure,
                max_iteration,
                ..Default::default()
            };
            let report = global_optimization(&graph, &option)?;
            log::info!(
                "objective {:?} -> {:?}; pruned edges {:?}",
                report.objective_trace.first(),
                report.objective_trace.last(),
                report.pruned
            );
            io::write_pose_graph(&output, &report.graph)
        }
        Command::Integrate(args) => integrate(&args),
        Command::Convert { ascii, input, output } => convert(&input, &output, ascii),
        Command::Reconstruct {
            config,
            settings,
            dataset,
            output,
        } => {
            let mut cfg = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    let mut cfg = PipelineConfig::default();
                    cfg.apply_text(&text)?;
                    cfg
                }
                None => PipelineConfig::default(),
            };
            settings.apply(&mut cfg)?;
            cfg.validate()?;
            let seq = load_sequence(&dataset, &cfg)?;
            log::info!("{} frames ({} with valid depth)", seq.frames.len(), seq.valid_frames());
            let rec = reconstruct(&seq, &cfg)?;
            write_reconstruction(&output, &rec)?;
            let t = &rec.report.timings;
            log::info!(
                "mesh: {} vertices, {} triangles; fragments {:.1} s, global {:.1} s, integration {:.1} s",
                rec.mesh.vertices.len(),
                rec.mesh.triangles.len(),
                t.fragments_s,
                t.global_s,
                t.integration_s
            );
            Ok(())
        }
        Command::Synth { frames, output } => {
            if frames == 0 {
                return Err(Error::InvalidArgument("frames must be positive".into()));
            }
            Dataset::sphere_and_planes(frames).write(&output)?;
            let path = output.join("config.txt");
            let text = format!("# settings matching the synthetic dataset\ndepth_scale = {DEPTH_SCALE}\n");
            std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
