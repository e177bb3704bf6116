//! Rotation algebra on SO(3) and rigid transforms.
//!
//! Rotations are stored as plain 3×3 orthonormal matrices ([`Rot3`]). The
//! error-state filter perturbs rotations on the right in the body frame:
//! `R_true = R_est * Rot3::exp(delta_theta)`. Every Jacobian in this crate is
//! derived against that convention.

use nalgebra::{Matrix3, Vector3};

/// 3-vector of `f64` (meters, m/s, rad/s or rad depending on context).
pub type Vec3 = Vector3<f64>;
/// 3×3 matrix of `f64`.
pub type Mat3 = Matrix3<f64>;

/// Skew-symmetric matrix `⌊v⌋ₓ` such that `skew(v) * w == v × w`.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of SO(3): `Exp(phi + d) ≈ Exp(phi) * Exp(Jr(phi) * d)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let s = skew(phi);
    if theta2 < 1e-16 {
        return Mat3::identity() - 0.5 * s + s * s / 6.0;
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Mat3::identity() - a * s + b * (s * s)
}

/// Inverse of the right Jacobian.
pub fn right_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let s = skew(phi);
    if theta2 < 1e-16 {
        return Mat3::identity() + 0.5 * s + s * s / 12.0;
    }
    let theta = theta2.sqrt();
    let half = 0.5 * theta;
    // 1/theta^2 - (1 + cos)/(2 theta sin) == (1/theta^2)(1 - theta/2 * cot(theta/2))
    let c = (1.0 - half * half.cos() / half.sin()) / theta2;
    Mat3::identity() + 0.5 * s + c * (s * s)
}

/// A 3D rotation, stored as an orthonormal matrix with `det = +1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot3(Mat3);

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Mat3::identity())
    }

    /// Wraps a matrix the caller guarantees to be orthonormal.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rot3(m)
    }

    /// Exponential map (Rodrigues). Falls back to a second-order Taylor
    /// expansion for `‖phi‖ < 1e-8`.
    pub fn exp(phi: &Vec3) -> Self {
        let theta2 = phi.norm_squared();
        let s = skew(phi);
        if theta2 < 1e-16 {
            // I + S + S²/2, re-normalized below the representable error floor anyway
            return Rot3(Mat3::identity() + s + s * s * 0.5);
        }
        let theta = theta2.sqrt();
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / theta2;
        Rot3(Mat3::identity() + a * s + b * (s * s))
    }

    /// Logarithm map, inverse of [`Rot3::exp`] on the ball `‖phi‖ < π`.
    ///
    /// The `trace ≈ -1` branch (angle near π) recovers the axis from the
    /// largest diagonal entry of `(R + I)/2`, fixing the sign so the pivot
    /// component is positive.
    pub fn log(&self) -> Vec3 {
        let r = &self.0;
        let trace = r.trace();
        let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
        let theta = cos_theta.acos();

        if theta < 1e-8 {
            // vee((R - Rᵀ)/2) with the first-order scale correction
            let v = Vec3::new(
                r[(2, 1)] - r[(1, 2)],
                r[(0, 2)] - r[(2, 0)],
                r[(1, 0)] - r[(0, 1)],
            );
            return 0.5 * v * (1.0 + theta * theta / 6.0);
        }

        if std::f64::consts::PI - theta < 1e-6 {
            // Near π the antisymmetric part vanishes; use B = (R + I)/2 = aaᵀ + O(π-θ).
            let b = (r + Mat3::identity()) * 0.5;
            let k = if b[(0, 0)] >= b[(1, 1)] && b[(0, 0)] >= b[(2, 2)] {
                0
            } else if b[(1, 1)] >= b[(2, 2)] {
                1
            } else {
                2
            };
            let mut axis = Vec3::zeros();
            axis[k] = b[(k, k)].max(0.0).sqrt();
            for i in 0..3 {
                if i != k {
                    axis[i] = b[(i, k)] / axis[k];
                }
            }
            let axis = axis.normalize();
            return axis * theta;
        }

        let v = Vec3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        v * (theta / (2.0 * theta.sin()))
    }

    /// First-order rotation `I + ⌊delta_r⌋ₓ`, projected back onto SO(3) via
    /// polar decomposition. Agrees with [`Rot3::exp`] to first order; the
    /// caller is responsible for `‖delta_r‖ ≪ 1`.
    pub fn from_small_angles(delta_r: &Vec3) -> Self {
        Rot3::project(&(Mat3::identity() + skew(delta_r)))
    }

    /// Nearest rotation matrix in Frobenius norm (polar factor).
    pub fn project(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd of 3x3 requested with u");
        let v_t = svd.v_t.expect("svd of 3x3 requested with v_t");
        let det = (u * v_t).determinant();
        let d = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, det.signum()));
        Rot3(u * d * v_t)
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        Rot3(self.0.transpose())
    }

    /// `‖RᵀR − I‖∞` and `|det − 1|`, for invariant checks.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let e = self.0.transpose() * self.0 - Mat3::identity();
        (e.abs().max(), (self.0.determinant() - 1.0).abs())
    }

    /// Geodesic angle to another rotation, in radians.
    pub fn angle_to(&self, other: &Rot3) -> f64 {
        (self.inverse() * *other).log().norm()
    }

    /// Re-projects onto SO(3); cheap guard against drift in long chains.
    pub fn renormalize(&mut self) {
        *self = Rot3::project(&self.0);
    }
}

impl std::ops::Mul for Rot3 {
    type Output = Rot3;
    #[inline]
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vec3> for Rot3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl std::ops::Mul<&Vec3> for &Rot3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rigid transform `p ↦ R p + t`. Houses the LiDAR-IMU extrinsics and the
/// per-scan world pose.
#[derive(Clone, Copy, Debug)]
pub struct RigidTransform {
    pub rot: Rot3,
    pub trans: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rot: Rot3::identity(),
            trans: Vec3::zeros(),
        }
    }

    pub fn new(rot: Rot3, trans: Vec3) -> Self {
        RigidTransform { rot, trans }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rot * *p + self.trans
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rot.inverse();
        RigidTransform {
            rot: rot_inv,
            trans: -(rot_inv * self.trans),
        }
    }

    /// Composition: `(a * b).apply(p) == a.apply(b.apply(p))`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    #[test]
    fn skew_zero_is_zero_matrix() {
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
    }

    #[test]
    fn skew_unit_cross_product() {
        let v = skew(&Vec3::new(1.0, 0.0, 0.0)) * Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(v, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn skew_matches_cross_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v = random_vec(&mut rng, 5.0);
            let w = random_vec(&mut rng, 5.0);
            // independent component-wise cross product
            let cross = Vec3::new(
                v.y * w.z - v.z * w.y,
                v.z * w.x - v.x * w.z,
                v.x * w.y - v.y * w.x,
            );
            assert_relative_eq!(skew(&v) * w, cross, epsilon = 1e-12);
        }
    }

    #[test]
    fn skew_is_antisymmetric_exactly() {
        let v = Vec3::new(0.3, -1.7, 2.9);
        let s = skew(&v);
        assert_eq!(s.transpose(), -s);
    }

    #[test]
    fn exp_zero_is_identity() {
        assert_eq!(Rot3::exp(&Vec3::zeros()), Rot3::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z_maps_x_to_y() {
        let r = Rot3::exp(&Vec3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let y = r * Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(y, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn exp_inverse_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let phi = random_vec(&mut rng, 3.0);
            let prod = Rot3::exp(&phi) * Rot3::exp(&(-phi));
            let err = (prod.matrix() - Mat3::identity()).abs().max();
            assert!(err < 1e-12, "exp(phi)exp(-phi) deviates: {err}");
        }
    }

    #[test]
    fn log_identity_is_zero() {
        assert_eq!(Rot3::identity().log(), Vec3::zeros());
    }

    #[test]
    fn log_exp_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let v = random_vec(&mut rng, 1.7); // keeps ‖v‖ < 3 as in the contract
            if v.norm() >= 3.0 {
                continue;
            }
            assert_relative_eq!(Rot3::exp(&v).log(), v, epsilon = 1e-10);
        }
    }

    #[test]
    fn log_pi_about_z_picks_positive_axis() {
        let r = Rot3::exp(&Vec3::new(0.0, 0.0, std::f64::consts::PI));
        let phi = r.log();
        assert_relative_eq!(
            phi,
            Vec3::new(0.0, 0.0, std::f64::consts::PI),
            epsilon = 1e-9
        );
    }

    #[test]
    fn log_near_pi_arbitrary_axis() {
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        let phi = axis * (std::f64::consts::PI - 1e-9);
        let back = Rot3::exp(&phi).log();
        assert_relative_eq!(back, phi, epsilon = 1e-6);
    }

    #[test]
    fn from_small_angles_zero_is_identity() {
        let r = Rot3::from_small_angles(&Vec3::zeros());
        assert_relative_eq!(*r.matrix(), Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn from_small_angles_close_to_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let d = random_vec(&mut rng, 0.1 / 3f64.sqrt());
            if d.norm() > 0.1 {
                continue;
            }
            let diff = Rot3::from_small_angles(&d).matrix() - Rot3::exp(&d).matrix();
            assert!(diff.norm() <= d.norm_squared() + 1e-15);
        }
    }

    #[test]
    fn first_order_matrix_entry_pattern() {
        // (row 0, col 1) of I + ⌊d⌋ₓ is -d_z
        let d = Vec3::new(0.01, 0.02, 0.03);
        let m = Mat3::identity() + skew(&d);
        assert_eq!(m[(0, 1)], -d.z);
        assert_eq!(m[(1, 0)], d.z);
        assert_eq!(m[(0, 2)], d.y);
    }

    #[test]
    fn rotation_action_derivative_is_minus_skew_p() {
        // d/dε [exp(ε u) p] at ε = 0 equals -skew(p) u, by central differences.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let h = 1e-6;
        for _ in 0..50 {
            let p = random_vec(&mut rng, 4.0);
            let u = random_vec(&mut rng, 1.0);
            let plus = Rot3::exp(&(u * h)) * p;
            let minus = Rot3::exp(&(u * -h)) * p;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = -skew(&p) * u;
            assert_relative_eq!(numeric, analytic, epsilon = 1e-6);
        }
    }

    #[test]
    fn right_jacobian_inverse_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let phi = random_vec(&mut rng, 1.5);
            let prod = right_jacobian(&phi) * right_jacobian_inv(&phi);
            assert_relative_eq!(prod, Mat3::identity(), epsilon = 1e-9);
        }
    }

    #[test]
    fn right_jacobian_first_order_identity() {
        // Exp(phi + d) ≈ Exp(phi) Exp(Jr(phi) d)
        let phi = Vec3::new(0.4, -0.2, 0.7);
        let d = Vec3::new(1e-5, -2e-5, 1.5e-5);
        let lhs = Rot3::exp(&(phi + d));
        let rhs = Rot3::exp(&phi) * Rot3::exp(&(right_jacobian(&phi) * d));
        let err = (lhs.matrix() - rhs.matrix()).abs().max();
        // the identity is first order; the remainder is O(‖d‖²)
        assert!(err < 100.0 * d.norm_squared(), "right Jacobian identity violated: {err}");
    }

    #[test]
    fn rigid_transform_compose_and_inverse() {
        let a = RigidTransform::new(
            Rot3::exp(&Vec3::new(0.1, 0.2, -0.3)),
            Vec3::new(1.0, -2.0, 0.5),
        );
        let b = RigidTransform::new(
            Rot3::exp(&Vec3::new(-0.4, 0.0, 0.9)),
            Vec3::new(0.0, 3.0, -1.0),
        );
        let p = Vec3::new(0.7, 0.8, -1.2);
        assert_relative_eq!((a * b).apply(&p), a.apply(&b.apply(&p)), epsilon = 1e-12);
        assert_relative_eq!(a.inverse().apply(&a.apply(&p)), p, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn prop_exp_outputs_orthonormal(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0
        ) {
            let r = Rot3::exp(&Vec3::new(x, y, z));
            let (ortho, det) = r.orthonormality_error();
            prop_assert!(ortho < 1e-9);
            prop_assert!(det < 1e-9);
        }

        #[test]
        fn prop_from_small_angles_orthonormal(
            x in -0.2f64..0.2, y in -0.2f64..0.2, z in -0.2f64..0.2
        ) {
            let r = Rot3::from_small_angles(&Vec3::new(x, y, z));
            let (ortho, det) = r.orthonormality_error();
            prop_assert!(ortho < 1e-9);
            prop_assert!(det < 1e-9);
        }

        #[test]
        fn prop_log_exp_round_trip(
            x in -1.5f64..1.5, y in -1.5f64..1.5, z in -1.5f64..1.5
        ) {
            let v = Vec3::new(x, y, z);
            let back = Rot3::exp(&v).log();
            prop_assert!((back - v).norm() < 1e-10);
        }
    }
}
