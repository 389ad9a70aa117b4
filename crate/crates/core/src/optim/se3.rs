//! Exponential and logarithm maps of SO(3) and SE(3) and their Jacobians.
//!
//! Twists are ordered rotation first: `xi = (omega, rho)`. The translation of
//! `exp(xi)` is `J_l(omega) * rho`.

use crate::geometry::RigidTransform;
use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use std::f64::consts::PI;

/// Below this rotation angle the closed forms switch to series expansions.
pub const SMALL_ANGLE: f64 = 1e-6;
const SERIES_ANGLE: f64 = 1e-2;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(omega);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + w * a + w * w * b
}

/// Rotation vector of `r`, with norm in `[0, pi]`.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = vee(&(r - r.transpose()));
    let s = 0.5 * v.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return v * (0.5 * (1.0 + theta * theta / 6.0));
    }
    if PI - theta > 1e-3 {
        return v * (theta / (2.0 * theta.sin()));
    }
    // Near pi: axis from the symmetric part, sign from the skew part.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
    let k = (0..3).fold(0, |best, j| if sym[(j, j)] > sym[(best, best)] { j } else { best });
    let mut axis: Vector3<f64> = sym.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(omega);
    let (a, b) = if theta < SERIES_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + w * a + w * w * b
}

/// Inverse of [`so3_left_jacobian`], valid for `|omega| < 2 pi`.
pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(omega);
    let b = if theta < SERIES_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - 1.0 / ((theta / 2.0).tan() * 2.0 * theta)
    };
    Matrix3::identity() - w * 0.5 + w * w * b
}

fn split(xi: &Vector6<f64>) -> (Vector3<f64>, Vector3<f64>) {
    (xi.fixed_rows::<3>(0).into_owned(), xi.fixed_rows::<3>(3).into_owned())
}

pub fn se3_exp(xi: &Vector6<f64>) -> RigidTransform {
    let (omega, rho) = split(xi);
    let r = so3_exp(&omega);
    let t = so3_left_jacobian(&omega) * rho;
    RigidTransform::from_rotation(&Rotation3::from_matrix_unchecked(r), t)
}

pub fn se3_log(t: &RigidTransform) -> Vector6<f64> {
    let omega = so3_log(&t.rotation());
    let rho = so3_left_jacobian_inv(&omega) * t.translation();
    let mut xi = Vector6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&omega);
    xi.fixed_rows_mut::<3>(3).copy_from(&rho);
    xi
}

/// Coupling block `Q` of the SE(3) left Jacobian.
fn se3_q(omega: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let theta = theta2.sqrt();
    let w = hat(omega);
    let p = hat(rho);
    let (c1, c2, c3) = if theta < SERIES_ANGLE {
        (
            1.0 / 6.0 - theta2 / 120.0,
            1.0 / 24.0 - theta2 / 720.0,
            1.0 / 120.0 - theta2 / 2520.0,
        )
    } else {
        let (s, c) = (theta.sin(), theta.cos());
        (
            (theta - s) / (theta2 * theta),
            (theta2 + 2.0 * c - 2.0) / (2.0 * theta2 * theta2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta2 * theta2 * theta),
        )
    };
    let wp = w * p;
    let pw = p * w;
    let wpw = wp * w;
    p * 0.5 + (wp + pw + wpw) * c1 + (w * wp + pw * w - wpw * 3.0) * c2 + (wpw * w + w * wpw) * c3
}

/// Left Jacobian of SE(3) in `(omega, rho)` ordering.
pub fn se3_left_jacobian(xi: &Vector6<f64>) -> Matrix6<f64> {
    let (omega, rho) = split(xi);
    let j = so3_left_jacobian(&omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&se3_q(&omega, &rho));
    out
}

pub fn se3_left_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    let (omega, rho) = split(xi);
    let ji = so3_left_jacobian_inv(&omega);
    let q = se3_q(&omega, &rho);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&ji);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&ji);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-(ji * q * ji)));
    out
}

/// `log(exp(xi) exp(eps)) ~ xi + J_r^-1(xi) eps`.
pub fn se3_right_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    se3_left_jacobian_inv(&(-xi))
}

/// Adjoint: `T exp(xi) T^-1 = exp(Ad_T xi)`.
pub fn se3_adjoint(t: &RigidTransform) -> Matrix6<f64> {
    let r = t.rotation();
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&t.translation()) * r));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_twist(rng: &mut Xoshiro256PlusPlus, max_angle: f64) -> Vector6<f64> {
        let axis = Vector3::from_fn(|_, _| rng.random::<f64>() - 0.5).normalize();
        let omega = axis * rng.random::<f64>() * max_angle;
        let rho = Vector3::from_fn(|_, _| rng.random::<f64>() * 4.0 - 2.0);
        Vector6::new(omega.x, omega.y, omega.z, rho.x, rho.y, rho.z)
    }

    #[test]
    fn exp_zero_is_identity() {
        assert!(se3_exp(&Vector6::zeros()).is_identity());
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
        for _ in 0..2000 {
            let xi = random_twist(&mut rng, PI - 1e-6);
            let back = se3_log(&se3_exp(&xi));
            assert!((back - xi).abs().max() < 1e-10, "{xi} -> {back}");
        }
        for scale in [1e-9, 1e-7, 1e-5, 1e-3, 1e-2, 0.5] {
            let xi = Vector6::new(0.3, -0.2, 0.9, 1.0, 2.0, -3.0) * scale;
            assert!((se3_log(&se3_exp(&xi)) - xi).abs().max() < 1e-10 * (1.0 + xi.norm()));
        }
    }

    #[test]
    fn log_near_pi() {
        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        for eps in [1e-4, 1e-6, 1e-8] {
            let omega = axis * (PI - eps);
            let back = so3_log(&so3_exp(&omega));
            assert!((back - omega).norm() < 1e-7, "eps {eps}: {back} vs {omega}");
        }
    }

    #[test]
    fn tiny_twist_matches_first_order_series() {
        let xi = Vector6::new(1e-9, -2e-9, 3e-9, 1e-9, 1e-9, -1e-9);
        let t = se3_exp(&xi);
        let mut first = Matrix4::identity();
        let w = hat(&Vector3::new(xi[0], xi[1], xi[2]));
        for r in 0..3 {
            for c in 0..3 {
                first[(r, c)] += w[(r, c)];
            }
        }
        first[(0, 3)] = xi[3];
        first[(1, 3)] = xi[4];
        first[(2, 3)] = xi[5];
        assert!(t.matrix().iter().all(|v| v.is_finite()));
        assert!((t.matrix() - first).abs().max() < 1e-15);
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let t = se3_exp(&random_twist(&mut rng, 2.0));
        let xi = random_twist(&mut rng, 1.0);
        let lhs = t * se3_exp(&xi) * t.inverse();
        let rhs = se3_exp(&(se3_adjoint(&t) * xi));
        assert!((lhs.matrix() - rhs.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn right_jacobian_inverse_is_first_order_correct() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        for _ in 0..50 {
            let xi = random_twist(&mut rng, 2.5);
            let jr_inv = se3_right_jacobian_inv(&xi);
            let t = se3_exp(&xi);
            let h = 1e-6;
            for k in 0..6 {
                let mut e = Vector6::zeros();
                e[k] = h;
                let plus = se3_log(&(t * se3_exp(&e)));
                let minus = se3_log(&(t * se3_exp(&-e)));
                let col = (plus - minus) / (2.0 * h);
                assert!((col - jr_inv.column(k)).abs().max() < 1e-6, "k={k}");
            }
        }
    }

    #[test]
    fn left_jacobian_inverse_pair() {
        let xi = Vector6::new(0.4, -1.2, 0.7, 0.3, 2.0, -1.0);
        let prod = se3_left_jacobian(&xi) * se3_left_jacobian_inv(&xi);
        assert!((prod - Matrix6::identity()).abs().max() < 1e-12);
    }
}
