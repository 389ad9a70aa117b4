//! Pairwise surface registration: feature-matched RANSAC and ICP.
//!
//! Fitness is always the fraction of *source* points with a target point
//! within the correspondence distance; `inlier_rmse` is taken over those
//! correspondences only.

mod estimation;
mod icp;
mod ransac;

pub use estimation::{estimate_point_to_plane, estimate_point_to_point, PointToPlaneSystem};
pub use icp::{registration_icp, IcpCriteria, IcpMethod};
pub use ransac::{registration_ransac_based_on_feature_matching, CorrespondenceChecker, RansacCriteria};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::spatial::KdTree;
use nalgebra::Vector3;
use rayon::prelude::*;

/// `(source index, target index)` pairs.
pub type CorrespondenceSet = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transformation: RigidTransform,
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub correspondences: CorrespondenceSet,
}

impl RegistrationResult {
    pub fn empty(transformation: RigidTransform) -> Self {
        Self {
            transformation,
            fitness: 0.0,
            inlier_rmse: 0.0,
            correspondences: Vec::new(),
        }
    }

    /// Higher fitness wins; equal fitness is broken by lower rmse.
    pub fn is_better_than(&self, other: &Self) -> bool {
        self.fitness > other.fitness || (self.fitness == other.fitness && self.inlier_rmse < other.inlier_rmse)
    }
}

pub(crate) fn check_distance(max_correspondence_distance: f64) -> Result<()> {
    if !(max_correspondence_distance > 0.0 && max_correspondence_distance.is_finite()) {
        return Err(Error::invalid(format!(
            "max_correspondence_distance must be positive, got {max_correspondence_distance}"
        )));
    }
    Ok(())
}

/// Correspondence search shared by RANSAC validation, ICP and
/// [`evaluate_registration`]. `moved` are the already transformed source
/// points. Nearest-neighbor queries run in parallel; the error sum is
/// accumulated serially in source order so the result never depends on the
/// thread count.
pub(crate) fn evaluate_moved(
    moved: &[Vector3<f64>],
    target_tree: &KdTree,
    max_correspondence_distance: f64,
    transformation: RigidTransform,
) -> RegistrationResult {
    let max2 = max_correspondence_distance * max_correspondence_distance;
    let hits: Vec<Option<(usize, f64)>> = moved
        .par_iter()
        .map(|p| target_tree.nearest_within(p.as_slice(), max2))
        .collect();
    let mut correspondences = Vec::new();
    let mut error2 = 0.0;
    for (i, hit) in hits.into_iter().enumerate() {
        if let Some((j, d2)) = hit {
            correspondences.push((i, j));
            error2 += d2;
        }
    }
    if correspondences.is_empty() {
        return RegistrationResult::empty(transformation);
    }
    RegistrationResult {
        transformation,
        fitness: correspondences.len() as f64 / moved.len() as f64,
        inlier_rmse: (error2 / correspondences.len() as f64).sqrt(),
        correspondences,
    }
}

pub(crate) fn transform_points(points: &[Vector3<f64>], t: &RigidTransform) -> Vec<Vector3<f64>> {
    points.par_iter().map(|p| t.apply_point(p)).collect()
}

/// Fitness and inlier rmse of `source` under `transformation` against `target`.
pub fn evaluate_registration(
    source: &PointCloud,
    target: &PointCloud,
    max_correspondence_distance: f64,
    transformation: &RigidTransform,
) -> Result<RegistrationResult> {
    check_distance(max_correspondence_distance)?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("source and target must be non-empty"));
    }
    let tree = target.kdtree()?;
    let moved = transform_points(&source.points, transformation);
    Ok(evaluate_moved(&moved, &tree, max_correspondence_distance, *transformation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        PointCloud::from_points((0..n).map(|_| Vector3::from_fn(|_, _| rng.random::<f64>())).collect())
    }

    #[test]
    fn perfect_alignment() {
        let c = random_cloud(1, 300);
        let r = evaluate_registration(&c, &c, 0.01, &RigidTransform::identity()).unwrap();
        assert_eq!(r.fitness, 1.0);
        assert_eq!(r.inlier_rmse, 0.0);
        assert!(r.correspondences.iter().all(|&(i, j)| i == j));
    }

    #[test]
    fn out_of_range() {
        let c = random_cloud(2, 100);
        let far = RigidTransform::from_translation(Vector3::new(10.0, 0.0, 0.0));
        let r = evaluate_registration(&c, &c, 0.5, &far).unwrap();
        assert_eq!(r.fitness, 0.0);
        assert!(r.correspondences.is_empty());
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        for seed in 0..5 {
            let src = random_cloud(10 + seed, 400);
            let tgt = random_cloud(20 + seed, 500);
            let t = RigidTransform::from_axis_angle(
                &Vector3::from_fn(|_, _| rng.random::<f64>() - 0.5),
                rng.random::<f64>() * 0.5,
                Vector3::from_fn(|_, _| 0.1 * (rng.random::<f64>() - 0.5)),
            );
            let dist = 0.05;
            let r = evaluate_registration(&src, &tgt, dist, &t).unwrap();
            let mut count = 0;
            let mut err = 0.0;
            for (i, p) in src.points.iter().enumerate() {
                let q = t.apply_point(p);
                let best = tgt
                    .points
                    .iter()
                    .enumerate()
                    .map(|(j, x)| ((x - q).norm_squared(), j))
                    .min_by(|a, b| a.partial_cmp(b).unwrap())
                    .unwrap();
                if best.0 <= dist * dist {
                    assert_eq!(r.correspondences[count], (i, best.1));
                    count += 1;
                    err += best.0;
                }
            }
            assert_eq!(r.correspondences.len(), count);
            assert_eq!(r.fitness, count as f64 / 400.0);
            assert!((r.inlier_rmse - (err / count as f64).sqrt()).abs() < 1e-12);
        }
    }
}
