use super::{check_distance, estimate_point_to_point, evaluate_moved, transform_points, RegistrationResult};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::geometry::{PointCloud, RigidTransform};
use crate::spatial::KdTree;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RansacCriteria {
    pub max_iteration: usize,
    pub max_validation: usize,
}

impl Default for RansacCriteria {
    fn default() -> Self {
        Self {
            max_iteration: 4_000_000,
            max_validation: 500,
        }
    }
}

/// Cheap tests that reject a RANSAC sample before full validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrespondenceChecker {
    /// Every edge between two sampled source points and the matching target
    /// edge must have `min(len) / max(len) >= similarity`.
    EdgeLength(f64),
    /// After fitting, every sampled pair must lie within this distance.
    Distance(f64),
}

impl CorrespondenceChecker {
    fn validate(&self) -> Result<()> {
        match *self {
            Self::EdgeLength(s) if !(s > 0.0 && s <= 1.0) => {
                Err(Error::invalid(format!("edge-length similarity must be in (0, 1], got {s}")))
            }
            Self::Distance(d) if !(d > 0.0 && d.is_finite()) => {
                Err(Error::invalid(format!("distance threshold must be positive, got {d}")))
            }
            _ => Ok(()),
        }
    }

    fn requires_transform(&self) -> bool {
        matches!(self, Self::Distance(_))
    }

    fn check(&self, src: &[Vector3<f64>], tgt: &[Vector3<f64>], t: &RigidTransform) -> bool {
        match *self {
            Self::EdgeLength(similarity) => {
                for a in 0..src.len() {
                    for b in a + 1..src.len() {
                        let ls = (src[a] - src[b]).norm();
                        let lt = (tgt[a] - tgt[b]).norm();
                        let (lo, hi) = if ls < lt { (ls, lt) } else { (lt, ls) };
                        if !(lo >= similarity * hi) || hi == 0.0 {
                            return false;
                        }
                    }
                }
                true
            }
            Self::Distance(threshold) => {
                let t2 = threshold * threshold;
                src.iter().zip(tgt).all(|(s, q)| (t.apply_point(s) - q).norm_squared() <= t2)
            }
        }
    }
}

fn sample_distinct(rng: &mut Xoshiro256PlusPlus, n: usize, k: usize, out: &mut Vec<usize>) {
    out.clear();
    while out.len() < k {
        let c = rng.random_range(0..n);
        if !out.contains(&c) {
            out.push(c);
        }
    }
}

/// Global registration from FPFH matches.
///
/// Each source point is paired with its nearest target point in feature
/// space. Samples of `ransac_n` distinct pairs are drawn from a
/// `Xoshiro256PlusPlus` stream seeded with `seed`, filtered by `checkers`,
/// fitted with [`estimate_point_to_point`] and validated against the whole
/// cloud. The loop ends after `criteria.max_iteration` samples or
/// `criteria.max_validation` validations. If no sample survives, the result
/// is the identity with fitness 0.
#[allow(clippy::too_many_arguments)]
pub fn registration_ransac_based_on_feature_matching(
    source: &PointCloud,
    target: &PointCloud,
    source_feature: &FeatureMatrix,
    target_feature: &FeatureMatrix,
    max_correspondence_distance: f64,
    ransac_n: usize,
    checkers: &[CorrespondenceChecker],
    criteria: RansacCriteria,
    seed: u64,
) -> Result<RegistrationResult> {
    check_distance(max_correspondence_distance)?;
    if source_feature.len() != source.len() || target_feature.len() != target.len() {
        return Err(Error::invalid(format!(
            "feature rows ({}, {}) do not match cloud sizes ({}, {})",
            source_feature.len(),
            target_feature.len(),
            source.len(),
            target.len()
        )));
    }
    if ransac_n < 3 {
        return Err(Error::invalid(format!("ransac_n must be at least 3, got {ransac_n}")));
    }
    if criteria.max_iteration == 0 || criteria.max_validation == 0 {
        return Err(Error::invalid("RANSAC criteria must be positive"));
    }
    for c in checkers {
        c.validate()?;
    }
    if target.is_empty() || ransac_n > source.len() {
        return Err(Error::invalid(format!(
            "ransac_n = {ransac_n} exceeds the {} candidate correspondences",
            source.len()
        )));
    }

    let feature_tree = KdTree::from_rows(target_feature.rows())?;
    let candidates: Vec<usize> = source_feature
        .rows()
        .par_iter()
        .map(|f| feature_tree.nearest_within(f, f64::INFINITY).map_or(0, |(j, _)| j))
        .collect();

    let target_tree = target.kdtree()?;
    let (pre, post): (Vec<&CorrespondenceChecker>, Vec<&CorrespondenceChecker>) = checkers.iter().partition(|c| !c.requires_transform());
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut best = RegistrationResult::empty(RigidTransform::identity());
    let mut validations = 0;
    let mut sample = Vec::with_capacity(ransac_n);
    let mut src = Vec::with_capacity(ransac_n);
    let mut tgt = Vec::with_capacity(ransac_n);
    let identity = RigidTransform::identity();

    for _ in 0..criteria.max_iteration {
        if validations >= criteria.max_validation {
            break;
        }
        sample_distinct(&mut rng, source.len(), ransac_n, &mut sample);
        src.clear();
        tgt.clear();
        for &i in &sample {
            src.push(source.points[i]);
            tgt.push(target.points[candidates[i]]);
        }
        if !pre.iter().all(|c| c.check(&src, &tgt, &identity)) {
            continue;
        }
        let Ok(t) = estimate_point_to_point(&src, &tgt) else {
            continue;
        };
        if !post.iter().all(|c| c.check(&src, &tgt, &t)) {
            continue;
        }
        validations += 1;
        let moved = transform_points(&source.points, &t);
        let result = evaluate_moved(&moved, &target_tree, max_correspondence_distance, t);
        if result.is_better_than(&best) {
            best = result;
        }
    }
    log::debug!(
        "ransac: {validations} validations, fitness {:.4}, rmse {:.6}",
        best.fitness,
        best.inlier_rmse
    );
    Ok(best)
}
