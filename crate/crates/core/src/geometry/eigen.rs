//! Closed-form eigen-solver for symmetric 3x3 matrices.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

/// Eigenvalues in ascending order (trigonometric solution of the cubic).
pub fn symmetric_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
    let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    if off == 0.0 {
        let mut d = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
        d.sort_by(f64::total_cmp);
        return d;
    }
    let q = a.trace() / 3.0;
    let b00 = a[(0, 0)] - q;
    let b11 = a[(1, 1)] - q;
    let b22 = a[(2, 2)] - q;
    let p = ((b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * off) / 6.0).sqrt();
    let (b01, b02, b12) = (a[(0, 1)], a[(0, 2)], a[(1, 2)]);
    let c00 = b11 * b22 - b12 * b12;
    let c01 = b01 * b22 - b12 * b02;
    let c02 = b01 * b12 - b02 * b11;
    let det = (b00 * c00 - b01 * c01 + b02 * c02) / (p * p * p);
    let half_det = (det * 0.5).clamp(-1.0, 1.0);
    let angle = half_det.acos() / 3.0;
    let beta2 = angle.cos() * 2.0;
    let beta0 = (angle + 2.0 * PI / 3.0).cos() * 2.0;
    let beta1 = -(beta0 + beta2);
    [q + p * beta0, q + p * beta1, q + p * beta2]
}

/// Unit eigenvector of `a` for `eigenvalue`, taken as the largest cross
/// product between rows of `a - eigenvalue * I`.
pub fn eigenvector_for(a: &Matrix3<f64>, eigenvalue: f64) -> Vector3<f64> {
    let m = a - Matrix3::identity() * eigenvalue;
    let r0: Vector3<f64> = m.row(0).transpose();
    let r1: Vector3<f64> = m.row(1).transpose();
    let r2: Vector3<f64> = m.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let (best, best_norm) = candidates
        .iter()
        .map(|c| (c, c.norm_squared()))
        .fold((&candidates[0], -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if best_norm > 1e-30 {
        return best / best_norm.sqrt();
    }
    // Repeated eigenvalue: any unit vector orthogonal to the dominant row.
    let rows = [r0, r1, r2];
    let dominant = rows
        .iter()
        .fold(&rows[0], |acc, r| if r.norm_squared() > acc.norm_squared() { r } else { acc });
    if dominant.norm_squared() <= 1e-30 {
        return Vector3::z();
    }
    let axis = if dominant.x.abs() <= dominant.y.abs() && dominant.x.abs() <= dominant.z.abs() {
        Vector3::x()
    } else if dominant.y.abs() <= dominant.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    dominant.cross(&axis).normalize()
}

/// Unit eigenvector of the smallest eigenvalue of a symmetric matrix.
///
/// The matrix is rescaled by its largest magnitude entry first. A zero
/// matrix yields `+z`.
pub fn smallest_eigenvector(a: &Matrix3<f64>) -> Vector3<f64> {
    let scale = a.abs().max();
    if scale == 0.0 || !scale.is_finite() {
        return Vector3::z();
    }
    let s = a / scale;
    let values = symmetric_eigenvalues(&s);
    eigenvector_for(&s, values[0])
}
