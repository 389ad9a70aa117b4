//! Fast Point Feature Histograms.
//!
//! Each descriptor is three 11-bin histograms concatenated: the `alpha`
//! feature (cosine between the target normal and the frame's `v` axis), the
//! `phi` feature (cosine between the source normal and the connecting line)
//! and the `theta` feature (angle of the target normal in the `u`/`w` plane).

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::SearchParam;
use nalgebra::Vector3;
use rayon::prelude::*;
use std::f64::consts::PI;

pub const BINS_PER_FEATURE: usize = 11;
pub const FEATURE_DIM: usize = 3 * BINS_PER_FEATURE;
/// Each sub-histogram of a simplified descriptor sums to this value.
pub const HISTOGRAM_MASS: f64 = 100.0;
/// Neighbors closer than this are treated as coincident and skipped.
pub const COINCIDENT_DISTANCE: f64 = 1e-12;

/// One 33-dimensional descriptor per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    rows: Vec<[f64; FEATURE_DIM]>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<[f64; FEATURE_DIM]>) -> Result<Self> {
        if rows.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("feature entries must be finite and non-negative"));
        }
        Ok(Self { rows })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            rows: vec![[0.0; FEATURE_DIM]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64; FEATURE_DIM] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[[f64; FEATURE_DIM]] {
        &self.rows
    }
}

/// Darboux-frame features `(alpha, phi, theta)` of an oriented point pair.
///
/// The point whose normal makes the smaller angle with the connecting line
/// acts as the source of the frame. Returns `None` for coincident points;
/// a connecting line parallel to the source normal yields all zeros.
pub fn pair_features(
    p1: &Vector3<f64>,
    n1: &Vector3<f64>,
    p2: &Vector3<f64>,
    n2: &Vector3<f64>,
) -> Option<[f64; 3]> {
    let mut d = p2 - p1;
    let dist = d.norm();
    if dist < COINCIDENT_DISTANCE {
        return None;
    }
    let angle1 = n1.dot(&d) / dist;
    let angle2 = n2.dot(&d) / dist;
    let (ns, nt, phi) = if angle1.abs().acos() > angle2.abs().acos() {
        d = -d;
        (n2, n1, -angle2)
    } else {
        (n1, n2, angle1)
    };
    let v = d.cross(ns);
    let v_norm = v.norm();
    if v_norm <= 1e-12 * dist {
        return Some([0.0; 3]);
    }
    let v = v / v_norm;
    let w = ns.cross(&v);
    let alpha = v.dot(nt);
    let theta = w.dot(nt).atan2(ns.dot(nt));
    Some([alpha, phi, theta])
}

/// Bin of `value` among 11 uniform bins over `[lo, hi]`; the top edge falls in
/// the last bin and out-of-range values are clamped.
pub fn bin_index(value: f64, lo: f64, hi: f64) -> usize {
    let b = (BINS_PER_FEATURE as f64 * (value - lo) / (hi - lo)).floor();
    b.clamp(0.0, (BINS_PER_FEATURE - 1) as f64) as usize
}

fn feature_bins(f: &[f64; 3]) -> [usize; 3] {
    [
        bin_index(f[0], -1.0, 1.0),
        BINS_PER_FEATURE + bin_index(f[1], -1.0, 1.0),
        2 * BINS_PER_FEATURE + bin_index(f[2], -PI, PI),
    ]
}

struct Neighborhood {
    indices: Vec<usize>,
    distances: Vec<f64>,
}

/// Computes FPFH descriptors.
///
/// `SPFH(p)` bins the pair features of `p` against each neighbor, each
/// sub-histogram normalized to [`HISTOGRAM_MASS`]. Then
/// `FPFH(p) = SPFH(p) + (1/K) * sum_k SPFH(q_k) / |p - q_k|`.
/// Points without neighbors get a zero row.
pub fn compute_fpfh_feature(cloud: &PointCloud, search: SearchParam) -> Result<FeatureMatrix> {
    if !cloud.has_normals() {
        return Err(Error::invalid("FPFH requires a cloud with normals"));
    }
    if matches!(search, SearchParam::Knn { .. }) {
        return Err(Error::invalid("FPFH requires a radius or hybrid search"));
    }
    search.validate()?;
    if cloud.is_empty() {
        return Ok(FeatureMatrix::zeros(0));
    }
    let tree = cloud.kdtree()?;
    let (points, normals) = (&cloud.points, &cloud.normals);

    let neighborhoods: Vec<Neighborhood> = points
        .par_iter()
        .enumerate()
        .map_init(Vec::new, |buf, (i, p)| {
            tree.search_into(p.as_slice(), search, buf).expect("dimension matches");
            let mut nb = Neighborhood {
                indices: Vec::with_capacity(buf.len()),
                distances: Vec::with_capacity(buf.len()),
            };
            for &(d2, j) in buf.iter() {
                let d = d2.sqrt();
                if j != i && d >= COINCIDENT_DISTANCE {
                    nb.indices.push(j);
                    nb.distances.push(d);
                }
            }
            nb
        })
        .collect();

    let spfh: Vec<[f64; FEATURE_DIM]> = neighborhoods
        .par_iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut hist = [0.0; FEATURE_DIM];
            if nb.indices.is_empty() {
                return hist;
            }
            let incr = HISTOGRAM_MASS / nb.indices.len() as f64;
            for &j in &nb.indices {
                if let Some(f) = pair_features(&points[i], &normals[i], &points[j], &normals[j]) {
                    for b in feature_bins(&f) {
                        hist[b] += incr;
                    }
                }
            }
            hist
        })
        .collect();

    let rows = neighborhoods
        .par_iter()
        .enumerate()
        .map(|(i, nb)| {
            let mut row = spfh[i];
            if nb.indices.is_empty() {
                return row;
            }
            let k = nb.indices.len() as f64;
            let mut weighted = [0.0; FEATURE_DIM];
            for (&j, &w) in nb.indices.iter().zip(&nb.distances) {
                for (acc, v) in weighted.iter_mut().zip(&spfh[j]) {
                    *acc += v / w;
                }
            }
            for (r, wv) in row.iter_mut().zip(&weighted) {
                *r += wv / k;
            }
            row
        })
        .collect();
    Ok(FeatureMatrix { rows })
}
