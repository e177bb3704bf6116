//! Scan containers: raw points as measured, and undistorted points carrying
//! their per-point covariance.

use crate::manifold::{Mat3, Rot3, Vec3};

/// One LiDAR return before undistortion, in the LiDAR frame at its firing time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawPoint {
    /// Position in the LiDAR frame at the firing time (m).
    pub pos: Vec3,
    /// Firing time relative to scan start (s), `δt_{j0} ≥ 0`.
    pub dt: f64,
}

/// A full scan of raw points, firing order preserved.
#[derive(Clone, Debug, Default)]
pub struct RawScan {
    /// Scan start time (s, dataset clock).
    pub t0: f64,
    pub points: Vec<RawPoint>,
}

impl RawScan {
    /// Keeps every `stride`-th point in firing order, preserving the
    /// timestamp distribution across the sweep.
    pub fn downsample_stride(&self, stride: usize) -> RawScan {
        let stride = stride.max(1);
        RawScan {
            t0: self.t0,
            points: self.points.iter().copied().step_by(stride).collect(),
        }
    }
}

/// One point after undistortion, aligned to the scan start.
#[derive(Clone, Copy, Debug)]
pub struct UndistortedPoint {
    /// Position in the LiDAR frame at scan start (m).
    pub pos: Vec3,
    /// The raw measurement this point came from (LiDAR frame at firing time).
    pub raw: Vec3,
    /// Firing time relative to scan start (s).
    pub dt: f64,
    /// Undistortion rotation applied to this point (LiDAR-at-firing-time to
    /// LiDAR-at-scan-start). Needed to rotate the beam covariance.
    pub rot: Rot3,
    /// Post-undistortion covariance in the LiDAR frame at scan start (m²).
    /// Zero until the uncertainty stage fills it in.
    pub cov: Mat3,
}

/// A scan with all points aligned to the scan start time.
#[derive(Clone, Debug, Default)]
pub struct UndistortedScan {
    pub t0: f64,
    pub points: Vec<UndistortedPoint>,
}
