use super::{
    check_distance, estimate_point_to_plane, estimate_point_to_point, evaluate_moved, transform_points,
    RegistrationResult,
};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpMethod {
    PointToPoint,
    PointToPlane,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpCriteria {
    pub max_iteration: usize,
    pub relative_fitness: f64,
    pub relative_rmse: f64,
}

impl Default for IcpCriteria {
    fn default() -> Self {
        Self {
            max_iteration: 30,
            relative_fitness: 1e-6,
            relative_rmse: 1e-6,
        }
    }
}

/// Iterative closest point refinement starting from `init`.
///
/// Each iteration re-estimates an incremental transform from the current
/// correspondences, composes it on the left and re-evaluates. A zero
/// correspondence set ends the loop and is reported as fitness 0; a
/// degenerate estimation ends it with the last valid result.
pub fn registration_icp(
    source: &PointCloud,
    target: &PointCloud,
    max_correspondence_distance: f64,
    init: &RigidTransform,
    method: IcpMethod,
    criteria: IcpCriteria,
) -> Result<RegistrationResult> {
    check_distance(max_correspondence_distance)?;
    if criteria.max_iteration == 0 || !(criteria.relative_fitness > 0.0) || !(criteria.relative_rmse > 0.0) {
        return Err(Error::invalid("ICP criteria must be positive"));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("source and target must be non-empty"));
    }
    if method == IcpMethod::PointToPlane && !target.has_normals() {
        return Err(Error::invalid("point-to-plane ICP requires target normals"));
    }
    let tree = target.kdtree()?;
    let mut transformation = *init;
    let mut moved = transform_points(&source.points, &transformation);
    let mut result = evaluate_moved(&moved, &tree, max_correspondence_distance, transformation);

    for _ in 0..criteria.max_iteration {
        if result.correspondences.is_empty() {
            break;
        }
        let src: Vec<Vector3<f64>> = result.correspondences.iter().map(|&(i, _)| moved[i]).collect();
        let tgt: Vec<Vector3<f64>> = result.correspondences.iter().map(|&(_, j)| target.points[j]).collect();
        let update = match method {
            IcpMethod::PointToPoint => estimate_point_to_point(&src, &tgt),
            IcpMethod::PointToPlane => {
                let normals: Vec<_> = result.correspondences.iter().map(|&(_, j)| target.normals[j]).collect();
                estimate_point_to_plane(&src, &tgt, &normals)
            }
        };
        let update = match update {
            Ok(u) => u,
            Err(e) => {
                log::debug!("icp stopped: {e}");
                break;
            }
        };
        transformation = update * transformation;
        moved = transform_points(&source.points, &transformation);
        let previous = std::mem::replace(&mut result, evaluate_moved(&moved, &tree, max_correspondence_distance, transformation));
        if (previous.fitness - result.fitness).abs() < criteria.relative_fitness
            && (previous.inlier_rmse - result.inlier_rmse).abs() < criteria.relative_rmse
        {
            break;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::estimate_normals;
    use crate::spatial::SearchParam;
    use proptest::prelude::*;

    fn surface(n: usize, seed: u64) -> PointCloud {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| {
                let (x, y) = (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                Vector3::new(x, y, 0.2 * (4.0 * x).sin() * (3.0 * y).cos() + 0.1 * x * x)
            })
            .collect();
        PointCloud::from_points(pts)
    }

    #[test]
    fn identical_clouds_one_iteration() {
        let c = surface(500, 1);
        let criteria = IcpCriteria {
            max_iteration: 1,
            ..Default::default()
        };
        let r = registration_icp(&c, &c, 0.02, &RigidTransform::identity(), IcpMethod::PointToPoint, criteria).unwrap();
        assert_eq!(r.fitness, 1.0);
        assert!(r.inlier_rmse < 1e-12);
        assert!((r.transformation.matrix() - nalgebra::Matrix4::identity()).amax() < 1e-12);
    }

    #[test]
    fn recovers_perturbation_point_to_point() {
        let target = surface(3000, 2);
        let perturb =
            RigidTransform::from_axis_angle(&Vector3::new(0.3, -0.5, 1.0), 5f64.to_radians(), Vector3::new(0.02, -0.01, 0.005));
        let source = target.transform(&perturb.inverse());
        let r = registration_icp(
            &source,
            &target,
            0.2,
            &RigidTransform::identity(),
            IcpMethod::PointToPoint,
            IcpCriteria {
                max_iteration: 200,
                ..Default::default()
            },
        )
        .unwrap();
        let (angle, trans) = r.transformation.distance_to(&perturb);
        assert!(angle.to_degrees() < 0.1 && trans < 1e-3, "angle {angle} trans {trans}");
    }

    #[test]
    fn point_to_plane_requires_normals() {
        let c = surface(50, 3);
        let r = registration_icp(&c, &c, 0.1, &RigidTransform::identity(), IcpMethod::PointToPlane, IcpCriteria::default());
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn point_to_plane_converges() {
        let mut target = surface(3000, 4);
        estimate_normals(&mut target, SearchParam::Hybrid { radius: 0.1, max_nn: 30 }).unwrap();
        let perturb = RigidTransform::from_axis_angle(&Vector3::new(1.0, 0.2, 0.1), 2f64.to_radians(), Vector3::new(0.01, 0.01, 0.0));
        let source = target.transform(&perturb.inverse());
        let r = registration_icp(&source, &target, 0.1, &RigidTransform::identity(), IcpMethod::PointToPlane, IcpCriteria::default()).unwrap();
        let (angle, trans) = r.transformation.distance_to(&perturb);
        assert!(angle.to_degrees() < 0.01 && trans < 1e-4, "angle {angle} trans {trans}");
    }

    #[test]
    fn no_correspondences_reports_zero_fitness() {
        let c = surface(100, 5);
        let far = RigidTransform::from_translation(Vector3::new(5.0, 0.0, 0.0));
        let r = registration_icp(&c, &c, 0.05, &far, IcpMethod::PointToPoint, IcpCriteria::default()).unwrap();
        assert_eq!(r.fitness, 0.0);
        assert_eq!(r.transformation, far);
    }

    fn objective(r: &RegistrationResult) -> f64 {
        r.inlier_rmse * r.inlier_rmse * r.correspondences.len() as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn point_to_point_objective_non_increasing(seed in 0u64..1000, angle in 0.0f64..0.2, tx in -0.05f64..0.05) {
            let target = surface(400, seed);
            let perturb = RigidTransform::from_axis_angle(&Vector3::new(0.2, 0.7, -0.4), angle, Vector3::new(tx, 0.01, 0.0));
            let source = target.transform(&perturb);
            let dist = 0.15;
            let mut previous: Option<RegistrationResult> = None;
            for k in 1..=8 {
                let criteria = IcpCriteria { max_iteration: k, relative_fitness: 1e-300, relative_rmse: 1e-300 };
                let r = registration_icp(&source, &target, dist, &RigidTransform::identity(), IcpMethod::PointToPoint, criteria).unwrap();
                for &(i, j) in &r.correspondences {
                    prop_assert!((r.transformation.apply_point(&source.points[i]) - target.points[j]).norm() <= dist);
                }
                if let Some(p) = &previous {
                    let rescored: f64 = p
                        .correspondences
                        .iter()
                        .map(|&(i, j)| (r.transformation.apply_point(&source.points[i]) - target.points[j]).norm_squared())
                        .sum();
                    prop_assert!(rescored <= objective(p) + 1e-12);
                }
                previous = Some(r);
            }
        }
    }
}
