//! Trajectory comparison metrics.

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Association tolerance between estimate and truth timestamps (s).
pub const ASSOC_TOL: f64 = 0.005;

/// Absolute pose error summary over associated pose pairs.
#[derive(Clone, Copy, Debug)]
pub struct ApeReport {
    /// Mean translational APE (m).
    pub mean: f64,
    /// RMSE translational APE (m).
    pub rmse: f64,
    /// Mean rotational APE (deg).
    pub mean_rot_deg: f64,
    /// Number of associated pose pairs.
    pub pairs: usize,
}

/// Translational and rotational APE with nearest-timestamp association.
/// Both trajectories are expected to share their reference frame (datasets
/// here anchor truth and estimate at the first pose by construction).
pub fn ape(estimate: &Trajectory, truth: &Trajectory) -> Result<ApeReport> {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut sum_rot = 0.0;
    let mut n = 0usize;
    for est in &estimate.poses {
        if let Some(gt) = truth.nearest(est.t, ASSOC_TOL) {
            let e = (est.pos - gt.pos).norm();
            sum += e;
            sum_sq += e * e;
            sum_rot += gt.rot.angle_to(&est.rot).to_degrees();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(ApeReport {
        mean: sum / n as f64,
        rmse: (sum_sq / n as f64).sqrt(),
        mean_rot_deg: sum_rot / n as f64,
        pairs: n,
    })
}
