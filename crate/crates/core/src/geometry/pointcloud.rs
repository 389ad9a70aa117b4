use super::eigen::smallest_eigenvector;
use super::RigidTransform;
use crate::error::{Error, Result};
use crate::spatial::{KdTree, SearchParam};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use std::collections::HashMap;

/// Points with optional per-point normals and colors.
///
/// An optional field is present when it is non-empty; a present field must
/// have exactly one record per point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        Self {
            points,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        !self.normals.is_empty() && self.normals.len() == self.points.len()
    }

    pub fn has_colors(&self) -> bool {
        !self.colors.is_empty() && self.colors.len() == self.points.len()
    }

    /// Checks the record-count invariants of the auxiliary fields.
    pub fn validate(&self) -> Result<()> {
        if !self.normals.is_empty() && self.normals.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} normals for {} points",
                self.normals.len(),
                self.points.len()
            )));
        }
        if !self.colors.is_empty() && self.colors.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} colors for {} points",
                self.colors.len(),
                self.points.len()
            )));
        }
        Ok(())
    }

    pub fn min_bound(&self) -> Vector3<f64> {
        self.points
            .iter()
            .fold(Vector3::repeat(f64::INFINITY), |acc, p| acc.inf(p))
    }

    pub fn max_bound(&self) -> Vector3<f64> {
        self.points
            .iter()
            .fold(Vector3::repeat(f64::NEG_INFINITY), |acc, p| acc.sup(p))
    }

    /// Maps points by `p -> Rp + t` and normals by `n -> Rn`.
    pub fn transform(&self, t: &RigidTransform) -> PointCloud {
        if t.is_identity() {
            return self.clone();
        }
        PointCloud {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            normals: self.normals.iter().map(|n| t.apply_vector(n)).collect(),
            colors: self.colors.clone(),
        }
    }

    /// Appends another cloud. Optional fields survive only if both sides have them.
    pub fn extend(&mut self, other: &PointCloud) {
        let keep_normals = (self.is_empty() || self.has_normals()) && other.has_normals();
        let keep_colors = (self.is_empty() || self.has_colors()) && other.has_colors();
        self.points.extend_from_slice(&other.points);
        if keep_normals {
            self.normals.extend_from_slice(&other.normals);
        } else {
            self.normals.clear();
        }
        if keep_colors {
            self.colors.extend_from_slice(&other.colors);
        } else {
            self.colors.clear();
        }
    }

    pub fn kdtree(&self) -> Result<KdTree> {
        KdTree::from_points(&self.points)
    }
}

#[derive(Default)]
struct VoxelAccum {
    point: Vector3<f64>,
    normal: Vector3<f64>,
    color: Vector3<f64>,
    count: usize,
}

/// Integer voxel key of `p` in a grid anchored at `origin`.
pub fn voxel_key(p: &Vector3<f64>, origin: &Vector3<f64>, voxel_size: f64) -> [i64; 3] {
    let r = (p - origin) / voxel_size;
    [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
}

/// Replaces the points in each occupied voxel by their mean.
///
/// The grid is anchored at the cloud's minimum bound. Output is sorted by
/// voxel key. Normals and colors are averaged the same way; averaged normals
/// are renormalized.
pub fn voxel_down_sample(cloud: &PointCloud, voxel_size: f64) -> Result<PointCloud> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::invalid(format!("voxel_size must be positive, got {voxel_size}")));
    }
    if cloud.is_empty() {
        return Err(Error::invalid("cannot downsample an empty cloud"));
    }
    cloud.validate()?;
    let origin = cloud.min_bound();
    let (has_n, has_c) = (cloud.has_normals(), cloud.has_colors());
    let mut voxels: HashMap<[i64; 3], VoxelAccum> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let acc = voxels.entry(voxel_key(p, &origin, voxel_size)).or_default();
        acc.point += p;
        if has_n {
            acc.normal += cloud.normals[i];
        }
        if has_c {
            acc.color += cloud.colors[i];
        }
        acc.count += 1;
    }
    let mut keys: Vec<[i64; 3]> = voxels.keys().copied().collect();
    keys.sort_unstable();
    let mut out = PointCloud::default();
    for key in keys {
        let acc = &voxels[&key];
        let n = acc.count as f64;
        out.points.push(acc.point / n);
        if has_n {
            let avg = acc.normal / n;
            let len = avg.norm();
            out.normals.push(if len > 0.0 { avg / len } else { avg });
        }
        if has_c {
            out.colors.push(acc.color / n);
        }
    }
    Ok(out)
}

/// Covariance of the points selected by `indices` (normalized by count).
pub fn covariance(points: &[Vector3<f64>], indices: &[usize]) -> Matrix3<f64> {
    let n = indices.len() as f64;
    let mean = indices.iter().fold(Vector3::zeros(), |acc, &i| acc + points[i]) / n;
    let mut cov = Matrix3::zeros();
    for &i in indices {
        let d = points[i] - mean;
        cov += d * d.transpose();
    }
    cov / n
}

/// Flips `n` so that its component of largest magnitude is positive.
pub fn canonical_sign(n: Vector3<f64>) -> Vector3<f64> {
    let mut k = 0;
    for j in 1..3 {
        if n[j].abs() > n[k].abs() {
            k = j;
        }
    }
    if n[k] < 0.0 {
        -n
    } else {
        n
    }
}

/// Estimates per-point normals by PCA over the neighborhood given by `search`.
///
/// Each normal is the unit eigenvector of the smallest eigenvalue of the
/// neighborhood covariance, signed so its largest-magnitude component is
/// positive. Points with fewer than three neighbors get `(0, 0, 1)`; their
/// count is returned.
pub fn estimate_normals(cloud: &mut PointCloud, search: SearchParam) -> Result<usize> {
    if cloud.len() < 3 {
        return Err(Error::invalid(format!(
            "normal estimation needs at least 3 points, got {}",
            cloud.len()
        )));
    }
    search.validate()?;
    let tree = cloud.kdtree()?;
    let points = &cloud.points;
    let normals: Vec<Option<Vector3<f64>>> = points
        .par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(buf, idx): &mut (Vec<(f64, usize)>, Vec<usize>), p| {
                tree.search_into(p.as_slice(), search, buf)
                    .expect("query dimension matches");
                if buf.len() < 3 {
                    return None;
                }
                idx.clear();
                idx.extend(buf.iter().map(|&(_, i)| i));
                Some(canonical_sign(smallest_eigenvector(&covariance(points, idx))))
            },
        )
        .collect();
    let sparse = normals.iter().filter(|n| n.is_none()).count();
    if sparse > 0 {
        log::debug!("{sparse} points had fewer than 3 neighbors; assigned (0,0,1)");
    }
    cloud.normals = normals.into_iter().map(|n| n.unwrap_or_else(Vector3::z)).collect();
    Ok(sparse)
}

/// Flips normals to point towards `viewpoint`.
pub fn orient_normals_towards_viewpoint(cloud: &mut PointCloud, viewpoint: &Vector3<f64>) -> Result<()> {
    if !cloud.has_normals() {
        return Err(Error::invalid("cloud has no normals to orient"));
    }
    for (n, p) in cloud.normals.iter_mut().zip(&cloud.points) {
        if n.dot(&(viewpoint - p)) < 0.0 {
            *n = -*n;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn singleton_downsample_is_identity() {
        let cloud = PointCloud::from_points(vec![Vector3::new(0.01, 0.01, 0.01)]);
        let down = voxel_down_sample(&cloud, 0.05).unwrap();
        assert_eq!(down.points, cloud.points);
    }

    #[test]
    fn two_points_share_voxel() {
        let cloud = PointCloud::from_points(vec![Vector3::zeros(), Vector3::new(0.01, 0.0, 0.0)]);
        let down = voxel_down_sample(&cloud, 0.05).unwrap();
        assert_eq!(down.points, vec![Vector3::new(0.005, 0.0, 0.0)]);
    }

    #[test]
    fn downsample_rejects_bad_input() {
        let cloud = PointCloud::from_points(vec![Vector3::zeros()]);
        assert!(matches!(voxel_down_sample(&cloud, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(voxel_down_sample(&cloud, -1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            voxel_down_sample(&PointCloud::default(), 0.1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn boundary_point_goes_to_higher_cell() {
        let cloud = PointCloud::from_points(vec![Vector3::zeros(), Vector3::new(0.5, 0.0, 0.0)]);
        let down = voxel_down_sample(&cloud, 0.5).unwrap();
        assert_eq!(down.len(), 2);
    }

    #[test]
    fn downsample_averages_colors_and_renormalizes_normals() {
        let cloud = PointCloud {
            points: vec![Vector3::zeros(), Vector3::new(0.01, 0.0, 0.0)],
            normals: vec![Vector3::x(), Vector3::y()],
            colors: vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 1.0)],
        };
        let down = voxel_down_sample(&cloud, 0.05).unwrap();
        assert!((down.normals[0] - Vector3::new(1.0, 1.0, 0.0).normalize()).norm() < 1e-15);
        assert_eq!(down.colors[0], Vector3::new(0.5, 0.0, 0.5));
    }

    #[test]
    fn planar_normals() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let points = (0..100)
            .map(|_| Vector3::new(rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.3, 0.0))
            .collect();
        let mut cloud = PointCloud::from_points(points);
        estimate_normals(&mut cloud, SearchParam::Hybrid { radius: 0.1, max_nn: 30 }).unwrap();
        for n in &cloud.normals {
            assert!((n - Vector3::z()).norm() < 1e-6, "{n}");
        }
    }

    #[test]
    fn too_few_points() {
        let mut cloud = PointCloud::from_points(vec![Vector3::zeros(), Vector3::x()]);
        assert!(matches!(
            estimate_normals(&mut cloud, SearchParam::Knn { max_nn: 3 }),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sparse_points_get_default_normal() {
        let mut cloud = PointCloud::from_points(vec![
            Vector3::zeros(),
            Vector3::new(10.0, 0.0, 0.0),
            Vector3::new(0.0, 10.0, 0.0),
        ]);
        let sparse = estimate_normals(&mut cloud, SearchParam::Radius { radius: 1.0 }).unwrap();
        assert_eq!(sparse, 3);
        assert!(cloud.normals.iter().all(|n| *n == Vector3::z()));
    }

    #[test]
    fn orient_towards_viewpoint() {
        let mut cloud = PointCloud {
            points: vec![Vector3::zeros()],
            normals: vec![Vector3::z()],
            colors: vec![],
        };
        orient_normals_towards_viewpoint(&mut cloud, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(cloud.normals[0], -Vector3::z());
    }
}
