use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::optim::se3::{so3_exp, so3_log};
use crate::optim::{normal_equations, solve_spd, JacobianBlock, RecordEval, ResidualSystem};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

/// Closed-form least-squares rigid transform mapping `source` onto `target`
/// (SVD of the cross-covariance, reflection corrected, no scale).
pub fn estimate_point_to_point(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::invalid(format!(
            "{} source points vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::degenerate(format!("need at least 3 pairs, got {}", source.len())));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::degenerate("cross-covariance has rank < 2 (collinear or coincident points)"));
    }
    let u = svd.u.expect("requested");
    let v = svd.v_t.expect("requested").transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();
    let rot = Rotation3::from_matrix_eps(&r, 1e-15, 20, Rotation3::from_matrix_unchecked(r));
    let t = ct - rot * cs;
    Ok(RigidTransform::from_rotation(&rot, t))
}

/// Point-to-plane residuals `((R s + t - q) . n)` over `x = (omega, t)` with
/// `R = exp(omega)`. Increments perturb the rotation on the left.
pub struct PointToPlaneSystem<'a> {
    pub source: &'a [Vector3<f64>],
    pub target: &'a [Vector3<f64>],
    pub normals: &'a [Vector3<f64>],
}

impl PointToPlaneSystem<'_> {
    pub fn transform(x: &DVector<f64>) -> RigidTransform {
        let omega = Vector3::new(x[0], x[1], x[2]);
        let r = so3_exp(&omega);
        RigidTransform::from_rotation(&Rotation3::from_matrix_unchecked(r), Vector3::new(x[3], x[4], x[5]))
    }
}

impl ResidualSystem for PointToPlaneSystem<'_> {
    fn num_params(&self) -> usize {
        6
    }

    fn num_records(&self) -> usize {
        self.source.len()
    }

    fn evaluate(&self, x: &DVector<f64>, i: usize, with_jacobian: bool) -> RecordEval {
        let r = so3_exp(&Vector3::new(x[0], x[1], x[2]));
        let rs = r * self.source[i];
        let n = &self.normals[i];
        let residual = (rs + Vector3::new(x[3], x[4], x[5]) - self.target[i]).dot(n);
        let blocks = if with_jacobian {
            let c = rs.cross(n);
            vec![JacobianBlock {
                col: 0,
                values: DMatrix::from_row_slice(1, 6, &[c.x, c.y, c.z, n.x, n.y, n.z]),
            }]
        } else {
            Vec::new()
        };
        RecordEval {
            residuals: vec![residual],
            blocks,
        }
    }

    fn retract(&self, x: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        let omega = so3_log(&(so3_exp(&Vector3::new(delta[0], delta[1], delta[2])) * so3_exp(&Vector3::new(x[0], x[1], x[2]))));
        DVector::from_vec(vec![
            omega.x,
            omega.y,
            omega.z,
            x[3] + delta[3],
            x[4] + delta[4],
            x[5] + delta[5],
        ])
    }
}

/// One Gauss-Newton step of point-to-plane alignment from the identity,
/// mapped back to a rigid transform through the rotation exponential.
pub fn estimate_point_to_plane(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    target_normals: &[Vector3<f64>],
) -> Result<RigidTransform> {
    if source.len() != target.len() || target.len() != target_normals.len() {
        return Err(Error::invalid("source, target and normals must have equal length"));
    }
    if source.len() < 6 {
        return Err(Error::degenerate(format!("need at least 6 pairs, got {}", source.len())));
    }
    let system = PointToPlaneSystem {
        source,
        target,
        normals: target_normals,
    };
    let x0 = DVector::zeros(6);
    let ne = normal_equations(&system, &x0);
    if !ne.objective.is_finite() {
        return Err(Error::invalid("non-finite point-to-plane residuals"));
    }
    if ne.gradient_inf_norm() == 0.0 {
        return Ok(RigidTransform::identity());
    }
    let step = solve_spd(&ne.jtj, &ne.jtr)
        .ok_or_else(|| Error::degenerate("point-to-plane normal equations are singular"))?;
    Ok(PointToPlaneSystem::transform(&system.retract(&x0, &(-step))))
}
