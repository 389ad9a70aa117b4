use crate::error::{Error, Result};
use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use std::ops::Mul;

/// Tolerance on orthonormality and determinant of the rotation block.
pub const RIGID_TOLERANCE: f64 = 1e-9;

/// A proper rigid motion stored as a 4x4 homogeneous matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    /// Validates `m` as a rigid transform: orthonormal rotation with
    /// determinant +1 (within [`RIGID_TOLERANCE`]) and bottom row exactly
    /// `(0, 0, 0, 1)`.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("transform has non-finite entries"));
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(Error::invalid("transform bottom row must be (0, 0, 0, 1)"));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > RIGID_TOLERANCE {
            return Err(Error::invalid(format!("rotation block is not orthonormal (error {ortho:e})")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > RIGID_TOLERANCE {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self { matrix: m })
    }

    /// Builds from a rotation matrix and translation, validating the rotation.
    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::from_matrix(Self::assemble(&rotation, &translation))
    }

    pub fn from_rotation(rotation: &Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            matrix: Self::assemble(rotation.matrix(), &translation),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_rotation(&Rotation3::identity(), t)
    }

    /// Rotation by `angle` radians about `axis`, then translation.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rot = match nalgebra::Unit::try_new(*axis, 1e-15) {
            Some(a) => Rotation3::from_axis_angle(&a, angle),
            None => Rotation3::identity(),
        };
        Self::from_rotation(&rot, translation)
    }

    /// Projects an approximately rigid matrix onto SE(3).
    pub fn orthonormalized(m: &Matrix4<f64>) -> Self {
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let t = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
        let rot = Rotation3::from_matrix_eps(&r, 1e-15, 100, Rotation3::identity());
        Self::from_rotation(&rot, t)
    }

    fn assemble(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
        m
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.matrix[(0, 3)], self.matrix[(1, 3)], self.matrix[(2, 3)])
    }

    pub fn is_identity(&self) -> bool {
        self.matrix == Matrix4::identity()
    }

    /// Exact inverse using the transpose of the rotation block.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        Self {
            matrix: Self::assemble(&rt, &t),
        }
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let m = &self.matrix;
        Vector3::new(
            m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)] * p.z + m[(0, 3)],
            m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)] * p.z + m[(1, 3)],
            m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + m[(2, 3)],
        )
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let m = &self.matrix;
        Vector3::new(
            m[(0, 0)] * v.x + m[(0, 1)] * v.y + m[(0, 2)] * v.z,
            m[(1, 0)] * v.x + m[(1, 1)] * v.y + m[(1, 2)] * v.z,
            m[(2, 0)] * v.x + m[(2, 1)] * v.y + m[(2, 2)] * v.z,
        )
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let cos = ((self.rotation().trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }

    /// Rotation angle and translation norm of `self^-1 * other`.
    pub fn distance_to(&self, other: &RigidTransform) -> (f64, f64) {
        let d = self.inverse() * *other;
        (d.rotation_angle(), d.translation().norm())
    }

    /// Row-major 16 values.
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.matrix[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::invalid(format!("expected 16 values, got {}", values.len())));
        }
        Self::from_matrix(Matrix4::from_row_slice(values))
    }
}

impl Mul for RigidTransform {
    type Output = RigidTransform;

    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        let mut m = self.matrix * rhs.matrix;
        m[(3, 0)] = 0.0;
        m[(3, 1)] = 0.0;
        m[(3, 2)] = 0.0;
        m[(3, 3)] = 1.0;
        RigidTransform { matrix: m }
    }
}
