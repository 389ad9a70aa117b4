//! Quantitative acceptance suite. Every test prints one line
//! `ACCEPTANCE <criterion> PASS|FAIL <measurements>` and fails when its
//! criterion is not met.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector, Vector3};
use r3d::geometry::{estimate_normals, voxel_down_sample};
use r3d::io::{self, FileFormat};
use r3d::optim::{
    dense_jacobian, gauss_newton_solve, global_optimization, normal_equations, normal_equations_serial, numeric_jacobian,
    GlobalOptimizationOption, LinearResiduals, PoseGraphSystem, ResidualSystem, Rosenbrock, SolverOptions, Termination,
};
use r3d::parallel::with_threads;
use r3d::pipeline::{load_sequence, reconstruct, PipelineConfig};
use r3d::registration::PointToPlaneSystem;
use r3d::synthetic::{default_intrinsic, look_at, Dataset, Scene, DEPTH_SCALE};
use r3d::{KdTree, PointCloud, SearchParam, TsdfVolume};
use rand::Rng;
use std::io::Write;
use std::time::{Duration, Instant};

fn verdict(criterion: &str, pass: bool, detail: String) {
    let line = format!(
        "ACCEPTANCE {criterion:<24} {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{}", line.trim_end());
}

#[test]
fn registration_recovery() {
    let start = Instant::now();
    let mut succeeded = 0;
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let case = registration_case(seed);
        let (_, refined) = full_registration(&case, seed);
        let (angle, shift) = refined.transformation.distance_to(&case.truth);
        let angle = angle.to_degrees();
        if angle < 0.1 && shift < 1e-3 {
            succeeded += 1;
            worst = (worst.0.max(angle), worst.1.max(shift));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "registration_recovery",
        succeeded >= 18 && elapsed < 30.0,
        format!(
            "{succeeded}/20 seeds within 0.1 deg / 1e-3 (worst success {:.2e} deg, {:.2e}); {elapsed:.1} s",
            worst.0, worst.1
        ),
    );
}

fn max_relative_jacobian_error<S: ResidualSystem>(system: &S, x: &DVector<f64>) -> f64 {
    let analytic = dense_jacobian(system, x);
    let numeric = numeric_jacobian(system, x, 1e-6);
    (analytic - &numeric).amax() / numeric.amax()
}

#[test]
fn solver_correctness() {
    let mut rng = rng(7);
    let mut one_step = 0.0f64;
    let mut all_one_step = true;
    for (rows, cols) in [(10, 3), (40, 6), (200, 12)] {
        let system = LinearResiduals {
            a: DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)),
            b: DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0)),
        };
        let x0 = DVector::from_fn(cols, |_, _| rng.random_range(-5.0..5.0));
        let report = gauss_newton_solve(&system, &x0, SolverOptions::default()).unwrap();
        let qr = system.a.clone().qr();
        let want = qr.r().solve_upper_triangular(&(qr.q().transpose() * &system.b)).unwrap();
        one_step = one_step.max((&report.iterates[1] - &want).amax());
        all_one_step &= report.termination == Termination::Converged && report.iterations == 1;
    }

    let mut errors = Vec::new();
    let lin = LinearResiduals {
        a: DMatrix::from_fn(30, 5, |_, _| rng.random_range(-1.0..1.0)),
        b: DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0)),
    };
    let case = noisy_loop(10, 1);
    let graph_system = PoseGraphSystem::from_graph(&case.graph);
    let cloud = r3d::synthetic::blob(300, 3);
    let mut target = cloud.transform(&r3d::RigidTransform::from_axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.2, Vector3::new(0.05, 0.0, -0.02)));
    estimate_normals(&mut target, NORMALS).unwrap();
    let plane_system = PointToPlaneSystem {
        source: &cloud.points,
        target: &target.points,
        normals: &target.normals,
    };
    for _ in 0..10 {
        let mut random = |n: usize, s: f64| DVector::from_fn(n, |_, _| rng.random_range(-s..s));
        errors.push(("linear", max_relative_jacobian_error(&lin, &random(5, 2.0))));
        errors.push(("rosenbrock", max_relative_jacobian_error(&Rosenbrock, &random(2, 2.0))));
        errors.push(("pose_graph", max_relative_jacobian_error(&graph_system, &random(graph_system.num_params(), 0.3))));
        errors.push(("point_to_plane", max_relative_jacobian_error(&plane_system, &random(6, 0.3))));
    }
    let (worst_name, worst) = errors.iter().fold(("", 0.0f64), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    verdict(
        "solver_correctness",
        all_one_step && one_step < 1e-10 && worst < 1e-5,
        format!("one-step error {one_step:.2e} (single step: {all_one_step}); worst Jacobian relative error {worst:.2e} ({worst_name})"),
    );
}

fn wavy_surface(n: usize, seed: u64) -> PointCloud {
    let mut rng = rng(seed);
    PointCloud::from_points(
        (0..n)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random_range(0.0..10.0), rng.random_range(0.0..10.0));
                Vector3::new(x, y, 0.1 * (3.0 * x).sin() * (2.0 * y).cos())
            })
            .collect(),
    )
}

#[test]
fn parallel_reduction() {
    let mut rng = rng(8);
    let rows = 100_000;
    let lin = LinearResiduals {
        a: DMatrix::from_fn(rows, 6, |_, _| rng.random_range(-1.0..1.0)),
        b: DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0)),
    };
    let x = DVector::from_element(6, 0.25);
    let serial = normal_equations_serial(&lin, &x);
    let scale = serial.jtj.amax().max(serial.jtr.amax());
    let mut reduction_error = 0.0f64;
    let mut reduction_identical = true;
    let first = with_threads(1, || normal_equations(&lin, &x));
    for threads in [1, 2, 4, 8] {
        let ne = with_threads(threads, || normal_equations(&lin, &x));
        reduction_error = reduction_error.max((&ne.jtj - &serial.jtj).amax().max((&ne.jtr - &serial.jtr).amax()) / scale);
        reduction_identical &= ne == first;
    }

    let cloud = wavy_surface(1_000_000, 9);
    let param = SearchParam::Hybrid { radius: 0.1, max_nn: 30 };
    let timed = |threads: usize| {
        let mut c = cloud.clone();
        let start = Instant::now();
        with_threads(threads, || estimate_normals(&mut c, param)).unwrap();
        (c.normals, start.elapsed().as_secs_f64())
    };
    let (reference, t1) = timed(1);
    let mut normal_error = 0.0f64;
    let mut t4 = f64::NAN;
    for threads in [2, 4, 8] {
        let (normals, t) = timed(threads);
        if threads == 4 {
            t4 = t;
        }
        normal_error = normal_error.max(normals.iter().zip(&reference).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max));
    }
    let speedup = t1 / t4;
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    verdict(
        "parallel_reduction",
        reduction_error <= 1e-9 && normal_error <= 1e-9 && speedup >= 2.0,
        format!(
            "JtJ/Jtr relative deviation {reduction_error:.2e} (bitwise equal across threads: {reduction_identical}); \
             normals deviation {normal_error:.2e}; 1e6-point normals {t1:.2} s at 1 thread, {t4:.2} s at 4 threads, \
             speedup {speedup:.2}x on {cores} logical core(s)"
        ),
    );
}

#[test]
fn oracle_equivalence() {
    let mut rng = rng(10);
    let points = random_points(&mut rng, 10_000, 1.0);
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.as_slice().to_vec()).collect();
    let tree = KdTree::from_points(&points).unwrap();
    let mut mismatches = 0;
    for q in 0..10_000 {
        let query = Vector3::from_fn(|_, _| rng.random_range(-1.1..1.1));
        let param = match q % 3 {
            0 => SearchParam::Knn { max_nn: rng.random_range(1..50) },
            1 => SearchParam::Radius { radius: rng.random_range(0.0..0.15) },
            _ => SearchParam::Hybrid {
                radius: rng.random_range(0.0..0.2),
                max_nn: rng.random_range(1..50),
            },
        };
        let got = tree.search_point(&query, param).unwrap();
        let want = linear_scan(&rows, query.as_slice(), param);
        if got.indices != want.iter().map(|e| e.1).collect::<Vec<_>>() || got.distances2 != want.iter().map(|e| e.0).collect::<Vec<_>>() {
            mismatches += 1;
        }
    }

    let mut cloud = PointCloud::from_points(random_points(&mut rng, 100_000, 3.0));
    cloud.colors = (0..cloud.len()).map(|_| Vector3::from_fn(|_, _| rng.random_range(0.0..1.0))).collect();
    let mut voxel_error = 0.0f64;
    let mut voxel_counts_match = true;
    for voxel in [0.02, 0.1, 0.5, 2.0] {
        let a = voxel_down_sample(&cloud, voxel).unwrap();
        let b = brute_voxel_down_sample(&cloud, voxel);
        voxel_counts_match &= a.len() == b.len();
        for (p, q) in a.points.iter().zip(&b.points).chain(a.colors.iter().zip(&b.colors)) {
            voxel_error = voxel_error.max((p - q).amax());
        }
    }

    let scene = Scene::sphere(Vector3::zeros(), 0.3);
    let intrinsic = default_intrinsic();
    let frames: Vec<_> = (0..20)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / 20.0;
            let pose = look_at(&Vector3::new(a.sin(), -a.cos(), 0.4), &Vector3::zeros());
            (scene.render(&intrinsic, &pose).unwrap(), pose.inverse())
        })
        .collect();
    let (origin, voxel, res, trunc) = (Vector3::repeat(-0.4), 0.8 / 48.0, 48, 0.05);
    let mut volume = TsdfVolume::new(origin, voxel, res, trunc).unwrap();
    for (rgbd, extrinsic) in &frames {
        volume.integrate(rgbd, &intrinsic, extrinsic).unwrap();
    }
    let (tsdf, weight) = naive_tsdf(origin, voxel, res, trunc, &intrinsic, &frames);
    let tsdf_error = volume.tsdf().iter().zip(&tsdf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let weight_error = volume.weight().iter().zip(&weight).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    verdict(
        "oracle_equivalence",
        mismatches == 0 && voxel_counts_match && voxel_error <= 1e-9 && tsdf_error <= 1e-9 && weight_error <= 1e-9,
        format!(
            "KD-tree {mismatches}/10000 query mismatches; voxel max deviation {voxel_error:.2e} (counts match: {voxel_counts_match}); \
             TSDF max deviation {tsdf_error:.2e}, weight {weight_error:.2e}"
        ),
    );
}

#[test]
fn pose_graph_robustness() {
    let case = noisy_loop(10, 0);
    let option = GlobalOptimizationOption {
        max_correspondence_distance: LOOP_DISTANCE,
        ..Default::default()
    };
    let report = global_optimization(&case.graph, &option).unwrap();
    let drift = position_rmse(&case.graph.nodes, &case.truth);
    let optimized = position_rmse(&report.graph.nodes, &case.truth);
    let monotone = report
        .inner_reports
        .iter()
        .all(|r| r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    let accepted_steps: usize = report.inner_reports.iter().map(|r| r.iterations).sum();
    let outlier = report.graph.edges[case.outlier].confidence;
    verdict(
        "pose_graph_robustness",
        optimized < 0.3 * drift && monotone && outlier < 0.25,
        format!(
            "position RMSE {optimized:.4} vs drift {drift:.4} (ratio {:.3}); objective monotone over {accepted_steps} accepted steps: {monotone}; \
             outlier confidence {outlier:.2e}",
            optimized / drift
        ),
    );
}

#[test]
fn reconstruction_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = Dataset::sphere_and_planes(60);
    dataset.write(dir.path()).unwrap();
    let config = PipelineConfig {
        fragment_size: 20,
        tsdf_voxel_size: 0.02,
        sdf_trunc: 0.08,
        depth_scale: DEPTH_SCALE,
        seed: 5,
        ..Default::default()
    };
    let run = |workers: usize| {
        let start = Instant::now();
        let config = PipelineConfig { workers, ..config.clone() };
        let rec = reconstruct(&load_sequence(dir.path(), &config).unwrap(), &config).unwrap();
        (rec, start.elapsed().as_secs_f64())
    };
    let (a, ta) = run(1);
    let (b, tb) = run(0);
    let reproducible = a.mesh == b.mesh && a.global_graph == b.global_graph && a.fragments == b.fragments;
    let gt0 = dataset.trajectory[0];
    let limit = 2.0 * config.tsdf_voxel_size;
    let within = a.mesh.vertices.iter().filter(|v| dataset.scene.distance(&gt0.apply_point(v)) < limit).count();
    let fraction = within as f64 / a.mesh.vertices.len() as f64;
    let slowest = ta.max(tb);
    verdict(
        "reconstruction_pipeline",
        fraction >= 0.95 && reproducible && slowest < 300.0,
        format!(
            "{:.2}% of {} vertices within {limit} m; bit-reproducible (1 vs all workers): {reproducible}; runtimes {ta:.1} s / {tb:.1} s",
            100.0 * fraction,
            a.mesh.vertices.len()
        ),
    );
}

#[test]
fn format_robustness() {
    let mut rng = rng(11);
    let seeds = fuzz_seeds();
    let (mut accepted, mut located, mut unlocated, mut panicked, mut hung) = (0, 0, 0, 0, 0);
    let mut examples = Vec::new();
    for case in 0..1000 {
        let (name, seed, kind) = &seeds[case % seeds.len()];
        let mut bytes = seed.clone();
        for _ in 0..rng.random_range(1..4) {
            bytes = mutate(&mut rng, &bytes);
        }
        match fuzz_one(*kind, bytes, Duration::from_secs(10)) {
            Some(FuzzOutcome::Accepted) => accepted += 1,
            Some(FuzzOutcome::Located) => located += 1,
            Some(FuzzOutcome::Unlocated(m)) => {
                unlocated += 1;
                examples.push(format!("{name}: {m}"));
            }
            Some(FuzzOutcome::Panicked(m)) => {
                panicked += 1;
                examples.push(format!("{name}: panic {m}"));
            }
            None => hung += 1,
        }
    }

    let mut cloud = PointCloud::from_points(random_points(&mut rng, 1000, 10.0));
    cloud.normals = random_points(&mut rng, 1000, 1.0).iter().map(|n| n.normalize()).collect();
    cloud.colors = (0..1000).map(|i| Vector3::repeat((i % 256) as f64 / 255.0)).collect();
    let bytes = io::encode_point_cloud(&cloud, FileFormat::PlyBinary).unwrap();
    let back = io::parse_point_cloud(&bytes, FileFormat::PlyBinary).unwrap();
    let bitwise = back == cloud && io::encode_point_cloud(&back, FileFormat::PlyBinary).unwrap() == bytes;

    verdict(
        "format_robustness",
        unlocated == 0 && panicked == 0 && hung == 0 && bitwise,
        format!(
            "1000 mutants: {accepted} accepted, {located} located errors, {unlocated} unlocated, {panicked} panics, {hung} hangs{}; \
             binary PLY bitwise round-trip: {bitwise}",
            if examples.is_empty() { String::new() } else { format!(" (e.g. {})", examples[0]) }
        ),
    );
}
