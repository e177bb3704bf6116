//! Full filter state and its 15-dimensional error-state algebra.
//!
//! Error-state ordering is fixed as `[δθ, δp, δv, δb_ω, δb_a]`; every
//! Jacobian in this crate indexes blocks through the `BLK_*` constants.

use crate::manifold::{Rot3, Vec3};
use nalgebra::{SMatrix, SVector};

/// Dimension of the error state.
pub const ERR_DIM: usize = 15;
/// Start index of the attitude error block `δθ`.
pub const BLK_THETA: usize = 0;
/// Start index of the position error block `δp`.
pub const BLK_POS: usize = 3;
/// Start index of the velocity error block `δv`.
pub const BLK_VEL: usize = 6;
/// Start index of the gyro-bias error block `δb_ω`.
pub const BLK_BG: usize = 9;
/// Start index of the accel-bias error block `δb_a`.
pub const BLK_BA: usize = 12;

/// 15-dimensional error-state vector.
pub type ErrorState = SVector<f64, ERR_DIM>;
/// 15×15 covariance / Jacobian matrix.
pub type CovMatrix = SMatrix<f64, ERR_DIM, ERR_DIM>;

/// Navigation state: pose, velocity, IMU biases, the fixed gravity vector and
/// the error-state covariance.
#[derive(Clone, Debug)]
pub struct NavState {
    /// Body-to-global rotation.
    pub rot: Rot3,
    /// Position in the global frame (m).
    pub pos: Vec3,
    /// Velocity in the global frame (m/s).
    pub vel: Vec3,
    /// Gyroscope bias (rad/s).
    pub bias_gyro: Vec3,
    /// Accelerometer bias (m/s²).
    pub bias_accel: Vec3,
    /// Gravity vector in the global frame (m/s²); constant, not estimated.
    pub gravity: Vec3,
    /// Error-state covariance.
    pub cov: CovMatrix,
    /// Timestamp of the state estimate (s).
    pub stamp: f64,
}

impl NavState {
    /// State at the origin with identity attitude and a diagonal prior.
    pub fn initial(gravity: Vec3, stamp: f64) -> Self {
        let mut cov = CovMatrix::zeros();
        for i in 0..3 {
            cov[(BLK_THETA + i, BLK_THETA + i)] = 1e-6;
            cov[(BLK_POS + i, BLK_POS + i)] = 1e-6;
            cov[(BLK_VEL + i, BLK_VEL + i)] = 1e-4;
            cov[(BLK_BG + i, BLK_BG + i)] = 1e-5;
            cov[(BLK_BA + i, BLK_BA + i)] = 1e-3;
        }
        NavState {
            rot: Rot3::identity(),
            pos: Vec3::zeros(),
            vel: Vec3::zeros(),
            bias_gyro: Vec3::zeros(),
            bias_accel: Vec3::zeros(),
            gravity,
            cov,
            stamp,
        }
    }

    /// On-manifold plus: rotation block through the exponential map, vector
    /// blocks additively. Covariance and stamp are carried over unchanged.
    pub fn boxplus(&self, delta: &ErrorState) -> NavState {
        let dtheta = Vec3::new(delta[BLK_THETA], delta[BLK_THETA + 1], delta[BLK_THETA + 2]);
        let dpos = Vec3::new(delta[BLK_POS], delta[BLK_POS + 1], delta[BLK_POS + 2]);
        let dvel = Vec3::new(delta[BLK_VEL], delta[BLK_VEL + 1], delta[BLK_VEL + 2]);
        let dbg = Vec3::new(delta[BLK_BG], delta[BLK_BG + 1], delta[BLK_BG + 2]);
        let dba = Vec3::new(delta[BLK_BA], delta[BLK_BA + 1], delta[BLK_BA + 2]);
        NavState {
            rot: self.rot * Rot3::exp(&dtheta),
            pos: self.pos + dpos,
            vel: self.vel + dvel,
            bias_gyro: self.bias_gyro + dbg,
            bias_accel: self.bias_accel + dba,
            gravity: self.gravity,
            cov: self.cov,
            stamp: self.stamp,
        }
    }

    /// On-manifold minus: `a.boxminus(&b)` is the delta with
    /// `b.boxplus(&delta) == a` (up to round-off).
    pub fn boxminus(&self, other: &NavState) -> ErrorState {
        let dtheta = (other.rot.inverse() * self.rot).log();
        let mut d = ErrorState::zeros();
        for i in 0..3 {
            d[BLK_THETA + i] = dtheta[i];
            d[BLK_POS + i] = self.pos[i] - other.pos[i];
            d[BLK_VEL + i] = self.vel[i] - other.vel[i];
            d[BLK_BG + i] = self.bias_gyro[i] - other.bias_gyro[i];
            d[BLK_BA + i] = self.bias_accel[i] - other.bias_accel[i];
        }
        d
    }

    /// Max symmetry violation of the covariance, `‖P − Pᵀ‖∞`.
    pub fn cov_asymmetry(&self) -> f64 {
        (self.cov - self.cov.transpose()).abs().max()
    }

    /// Forces the covariance symmetric.
    pub fn symmetrize_cov(&mut self) {
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
    }
}

/// Reads a 3-block of an error vector as a `Vec3`.
#[inline]
pub fn block3(v: &ErrorState, start: usize) -> Vec3 {
    Vec3::new(v[start], v[start + 1], v[start + 2])
}
