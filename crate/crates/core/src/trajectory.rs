//! Timestamped pose sequences.

use crate::manifold::{Rot3, Vec3};

/// One stamped pose.
#[derive(Clone, Copy, Debug)]
pub struct TrajPose {
    pub t: f64,
    pub rot: Rot3,
    pub pos: Vec3,
}

/// A time-ordered pose sequence.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub poses: Vec<TrajPose>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn push(&mut self, pose: TrajPose) {
        self.poses.push(pose);
    }

    /// The pose with the timestamp nearest to `t`, if within `tol` seconds.
    pub fn nearest(&self, t: f64, tol: f64) -> Option<&TrajPose> {
        if self.poses.is_empty() {
            return None;
        }
        let i = self.poses.partition_point(|p| p.t < t);
        let mut best: Option<&TrajPose> = None;
        for cand in [i.checked_sub(1), Some(i)].into_iter().flatten() {
            if let Some(p) = self.poses.get(cand) {
                if (p.t - t).abs() <= tol
                    && best.map_or(true, |b| (p.t - t).abs() < (b.t - t).abs())
                {
                    best = Some(p);
                }
            }
        }
        best
    }
}
