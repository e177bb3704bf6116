//! IMU-driven forward propagation and per-point undistortion poses.
//!
//! Propagation integrates the strapdown kinematics with the midpoint rule
//! between consecutive IMU samples and pushes the 15×15 error-state
//! covariance through the linearized transition. Undistortion aligns every
//! point of a scan to the scan start time.

use crate::error::{Error, Result};
use crate::manifold::{right_jacobian, skew, Mat3, RigidTransform, Rot3, Vec3};
use crate::scan::{RawScan, UndistortedPoint, UndistortedScan};
use crate::state::{CovMatrix, NavState, BLK_BA, BLK_BG, BLK_POS, BLK_THETA, BLK_VEL};
use serde::{Deserialize, Serialize};

/// One IMU reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    /// Timestamp (s, dataset clock).
    pub t: f64,
    /// Angular rate measurement `ω_m` (rad/s, body frame).
    pub gyro: Vec3,
    /// Specific-force measurement `a_m` (m/s², body frame).
    pub accel: Vec3,
}

/// A time-ordered run of IMU samples.
#[derive(Clone, Debug, Default)]
pub struct ImuWindow {
    samples: Vec<ImuSample>,
}

impl ImuWindow {
    /// Wraps samples, rejecting non-monotonic timestamps.
    pub fn new(samples: Vec<ImuSample>) -> Result<Self> {
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].t <= pair[0].t {
                return Err(Error::NonMonotonicTimestamps { index: i + 1 });
            }
        }
        Ok(ImuWindow { samples })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn first_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.t)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t)
    }

    /// Samples with `t` in `[from, to]`, plus one bracketing sample on each
    /// side when available.
    pub fn slice_covering(&self, from: f64, to: f64) -> ImuWindow {
        let mut start = self.samples.partition_point(|s| s.t < from);
        if start > 0 && self.samples.get(start).map_or(true, |s| s.t > from) {
            start -= 1;
        }
        let mut end = self.samples.partition_point(|s| s.t <= to);
        if end < self.samples.len() {
            end += 1;
        }
        ImuWindow {
            samples: self.samples[start..end].to_vec(),
        }
    }

    /// Linear interpolation of the gyro at `t`; clamps outside the span.
    pub fn gyro_at(&self, t: f64) -> Vec3 {
        if self.samples.is_empty() {
            return Vec3::zeros();
        }
        if t <= self.samples[0].t {
            return self.samples[0].gyro;
        }
        if t >= self.samples[self.samples.len() - 1].t {
            return self.samples[self.samples.len() - 1].gyro;
        }
        let hi = self.samples.partition_point(|s| s.t <= t);
        let a = &self.samples[hi - 1];
        let b = &self.samples[hi];
        let s = (t - a.t) / (b.t - a.t);
        a.gyro * (1.0 - s) + b.gyro * s
    }
}

/// Continuous-time IMU noise densities.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct NoiseParams {
    /// Gyro white noise density (rad/s/√Hz).
    pub sigma_gyro: f64,
    /// Accelerometer white noise density (m/s²/√Hz).
    pub sigma_accel: f64,
    /// Gyro bias random-walk density (rad/s²/√Hz).
    pub sigma_bias_gyro_walk: f64,
    /// Accelerometer bias random-walk density (m/s³/√Hz).
    pub sigma_bias_accel_walk: f64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_gyro,
            self.sigma_accel,
            self.sigma_bias_gyro_walk,
            self.sigma_bias_accel_walk,
        ];
        if all.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config(
                "noise densities must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            sigma_gyro: 0.02,
            sigma_accel: 0.2,
            sigma_bias_gyro_walk: 1e-4,
            sigma_bias_accel_walk: 1e-3,
        }
    }
}

/// One step of the strapdown mean integration, midpoint rule.
fn integrate_step(
    rot: &mut Rot3,
    pos: &mut Vec3,
    vel: &mut Vec3,
    omega_corr: &Vec3,
    accel_corr: &Vec3,
    gravity: &Vec3,
    dt: f64,
) {
    let rot_mid = *rot * Rot3::exp(&(omega_corr * (0.5 * dt)));
    let acc_world = rot_mid * *accel_corr + gravity;
    *pos += *vel * dt + acc_world * (0.5 * dt * dt);
    *vel += acc_world * dt;
    *rot = *rot * Rot3::exp(&(omega_corr * dt));
}

/// Error-state transition Jacobian for one step.
fn transition_jacobian(rot: &Rot3, omega_corr: &Vec3, accel_corr: &Vec3, dt: f64) -> CovMatrix {
    let mut f = CovMatrix::identity();
    let r = rot.matrix();
    let phi = omega_corr * dt;
    let rot_step_t = Rot3::exp(&phi).matrix().transpose();
    f.fixed_view_mut::<3, 3>(BLK_THETA, BLK_THETA)
        .copy_from(&rot_step_t);
    f.fixed_view_mut::<3, 3>(BLK_THETA, BLK_BG)
        .copy_from(&(-right_jacobian(&phi) * dt));
    let r_skew_a = r * skew(accel_corr);
    f.fixed_view_mut::<3, 3>(BLK_POS, BLK_THETA)
        .copy_from(&(-r_skew_a * (0.5 * dt * dt)));
    f.fixed_view_mut::<3, 3>(BLK_POS, BLK_VEL)
        .copy_from(&(Mat3::identity() * dt));
    f.fixed_view_mut::<3, 3>(BLK_POS, BLK_BA)
        .copy_from(&(-r * (0.5 * dt * dt)));
    f.fixed_view_mut::<3, 3>(BLK_VEL, BLK_THETA)
        .copy_from(&(-r_skew_a * dt));
    f.fixed_view_mut::<3, 3>(BLK_VEL, BLK_BA)
        .copy_from(&(-r * dt));
    f
}

fn process_noise(noise: &NoiseParams, dt: f64) -> CovMatrix {
    let mut q = CovMatrix::zeros();
    for i in 0..3 {
        q[(BLK_THETA + i, BLK_THETA + i)] = noise.sigma_gyro.powi(2) * dt;
        q[(BLK_VEL + i, BLK_VEL + i)] = noise.sigma_accel.powi(2) * dt;
        q[(BLK_BG + i, BLK_BG + i)] = noise.sigma_bias_gyro_walk.powi(2) * dt;
        q[(BLK_BA + i, BLK_BA + i)] = noise.sigma_bias_accel_walk.powi(2) * dt;
    }
    q
}

/// Propagates mean and covariance through an IMU window, noise-free mean
/// (`w = 0`) and `P ← F P Fᵀ + Q Δt` per inter-sample step.
///
/// The window must start at or after the state stamp; the returned state is
/// stamped at the last sample.
pub fn propagate(state: &NavState, window: &ImuWindow, noise: &NoiseParams) -> Result<NavState> {
    if window.is_empty() {
        return Err(Error::WindowTooShort {
            have_start: state.stamp,
            have_end: state.stamp,
            need_start: state.stamp,
            need_end: state.stamp,
        });
    }
    // monotonicity is enforced at construction; re-check cheaply for windows
    // assembled by hand
    for (i, pair) in window.samples().windows(2).enumerate() {
        if pair[1].t <= pair[0].t {
            return Err(Error::NonMonotonicTimestamps { index: i + 1 });
        }
    }

    let mut out = state.clone();
    let samples = window.samples();

    // zero-order hold from the state stamp to the first sample
    let lead = samples[0].t - state.stamp;
    if lead > 0.0 {
        step_state(&mut out, &samples[0].gyro, &samples[0].accel, lead, noise);
    }
    for pair in samples.windows(2) {
        let dt = pair[1].t - pair[0].t;
        let gyro = (pair[0].gyro + pair[1].gyro) * 0.5;
        let accel = (pair[0].accel + pair[1].accel) * 0.5;
        step_state(&mut out, &gyro, &accel, dt, noise);
    }
    out.stamp = samples[samples.len() - 1].t;
    out.symmetrize_cov();
    Ok(out)
}

/// Propagates the state to exactly `t_target`, walking the window's sample
/// times and finishing with a partial step. Measurements for each step are
/// interpolated at the step midpoint.
pub fn propagate_to(
    state: &NavState,
    window: &ImuWindow,
    noise: &NoiseParams,
    t_target: f64,
) -> Result<NavState> {
    if window.is_empty() || window.last_time().unwrap() < t_target - 1e-7 {
        return Err(Error::WindowTooShort {
            have_start: window.first_time().unwrap_or(f64::NAN),
            have_end: window.last_time().unwrap_or(f64::NAN),
            need_start: state.stamp,
            need_end: t_target,
        });
    }
    let samples = window.samples();
    let interp = |t: f64| -> (Vec3, Vec3) {
        let i = samples.partition_point(|s| s.t <= t);
        if i == 0 {
            return (samples[0].gyro, samples[0].accel);
        }
        if i >= samples.len() {
            let last = &samples[samples.len() - 1];
            return (last.gyro, last.accel);
        }
        let a = &samples[i - 1];
        let b = &samples[i];
        let s = (t - a.t) / (b.t - a.t);
        (
            a.gyro * (1.0 - s) + b.gyro * s,
            a.accel * (1.0 - s) + b.accel * s,
        )
    };

    let mut out = state.clone();
    let mut t_cursor = state.stamp;
    let mut knots: Vec<f64> = samples
        .iter()
        .map(|s| s.t)
        .filter(|&t| t > t_cursor && t < t_target)
        .collect();
    knots.push(t_target);
    for t_next in knots {
        let dt = t_next - t_cursor;
        if dt > 0.0 {
            let (gy, ac) = interp(0.5 * (t_cursor + t_next));
            step_state(&mut out, &gy, &ac, dt, noise);
        }
        t_cursor = t_next;
    }
    out.stamp = t_target;
    out.symmetrize_cov();
    Ok(out)
}

fn step_state(state: &mut NavState, gyro_m: &Vec3, accel_m: &Vec3, dt: f64, noise: &NoiseParams) {
    let omega = gyro_m - state.bias_gyro;
    let accel = accel_m - state.bias_accel;
    let f = transition_jacobian(&state.rot, &omega, &accel, dt);
    let gravity = state.gravity;
    integrate_step(
        &mut state.rot,
        &mut state.pos,
        &mut state.vel,
        &omega,
        &accel,
        &gravity,
        dt,
    );
    state.cov = f * state.cov * f.transpose() + process_noise(noise, dt);
}

/// One pose sample of the intra-scan timeline, relative to the scan-start
/// IMU frame.
#[derive(Clone, Copy, Debug)]
pub struct TimelineEntry {
    /// Timestamp (s, dataset clock).
    pub t: f64,
    /// Rotation from the IMU frame at `t` to the IMU frame at scan start.
    pub rot: Rot3,
    /// Translation of the IMU frame at `t`, in the scan-start IMU frame (m).
    pub pos: Vec3,
    /// World velocity of the IMU at `t`, expressed in the scan-start IMU
    /// frame (m/s).
    pub vel: Vec3,
}

/// Relative pose samples covering one scan interval.
#[derive(Clone, Debug)]
pub struct PoseTimeline {
    entries: Vec<TimelineEntry>,
}

impl PoseTimeline {
    pub fn entries(&self) -> &[TimelineEntry] {
        &self.entries
    }

    pub fn start_time(&self) -> f64 {
        self.entries[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.entries[self.entries.len() - 1].t
    }

    /// Interpolated relative pose at `t`: rotation by first-order geodesic
    /// interpolation between bracketing samples, translation linearly.
    pub fn sample(&self, t: f64) -> Result<(Rot3, Vec3)> {
        let start = self.start_time();
        let end = self.end_time();
        // tolerate round-off at the edges
        let eps = 1e-9;
        if t < start - eps || t > end + eps {
            return Err(Error::TimestampOutOfRange { t, start, end });
        }
        let t = t.clamp(start, end);
        let hi = self
            .entries
            .partition_point(|e| e.t <= t)
            .min(self.entries.len() - 1)
            .max(1);
        let a = &self.entries[hi - 1];
        let b = &self.entries[hi];
        let s = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 0.0 };
        let dphi = (a.rot.inverse() * b.rot).log();
        let rot = a.rot * Rot3::exp(&(dphi * s));
        let pos = a.pos * (1.0 - s) + b.pos * s;
        Ok((rot, pos))
    }

    /// Conjugates the timeline by the LiDAR-IMU extrinsics so entries map
    /// LiDAR-frame-at-`t` to LiDAR-frame-at-scan-start.
    pub fn to_lidar_frame(&self, extrinsics: &RigidTransform) -> PoseTimeline {
        let r_l = extrinsics.rot;
        let r_l_inv = r_l.inverse();
        let t_l = extrinsics.trans;
        let entries = self
            .entries
            .iter()
            .map(|e| TimelineEntry {
                t: e.t,
                rot: r_l_inv * e.rot * r_l,
                pos: r_l_inv * (e.rot * t_l + e.pos - t_l),
                vel: r_l_inv * e.vel,
            })
            .collect();
        PoseTimeline { entries }
    }
}

/// Integrates the bias-corrected window into relative poses over
/// `[span_start, span_end]`, anchored at identity at `span_start`.
///
/// The window must bracket the span. Entries are produced at `span_start`,
/// at every sample time strictly inside the span, and at `span_end`.
pub fn build_pose_timeline(
    state: &NavState,
    window: &ImuWindow,
    span_start: f64,
    span_end: f64,
) -> Result<PoseTimeline> {
    let have_start = window.first_time().unwrap_or(f64::INFINITY);
    let have_end = window.last_time().unwrap_or(f64::NEG_INFINITY);
    // allow sub-microsecond slack at the ends
    let eps = 1e-7;
    if have_start > span_start + eps || have_end < span_end - eps {
        return Err(Error::WindowTooShort {
            have_start,
            have_end,
            need_start: span_start,
            need_end: span_end,
        });
    }

    // integrate in the world frame from the filter state, then re-express
    // relative to the pose at span_start
    let mut rot = state.rot;
    let mut pos = state.pos;
    let mut vel = state.vel;

    let samples = window.samples();
    let mut knots: Vec<f64> = Vec::with_capacity(samples.len() + 2);
    knots.push(span_start);
    for s in samples {
        if s.t > span_start && s.t < span_end {
            knots.push(s.t);
        }
    }
    knots.push(span_end);

    // measurement lookup with midpoint values between knots
    let interp = |t: f64| -> (Vec3, Vec3) {
        let i = samples.partition_point(|s| s.t <= t);
        if i == 0 {
            return (samples[0].gyro, samples[0].accel);
        }
        if i >= samples.len() {
            let last = &samples[samples.len() - 1];
            return (last.gyro, last.accel);
        }
        let a = &samples[i - 1];
        let b = &samples[i];
        let s = (t - a.t) / (b.t - a.t);
        (
            a.gyro * (1.0 - s) + b.gyro * s,
            a.accel * (1.0 - s) + b.accel * s,
        )
    };

    // bring the state pose up to span_start
    let mut t_cursor = state.stamp;
    if span_start > t_cursor {
        let (gy, ac) = interp(0.5 * (t_cursor + span_start));
        integrate_step(
            &mut rot,
            &mut pos,
            &mut vel,
            &(gy - state.bias_gyro),
            &(ac - state.bias_accel),
            &state.gravity,
            span_start - t_cursor,
        );
    }
    t_cursor = span_start;

    let rot0 = rot;
    let pos0 = pos;
    let rot0_inv = rot0.inverse();

    let mut entries = Vec::with_capacity(knots.len());
    entries.push(TimelineEntry {
        t: span_start,
        rot: Rot3::identity(),
        pos: Vec3::zeros(),
        vel: rot0_inv * vel,
    });

    for &t_next in &knots[1..] {
        let dt = t_next - t_cursor;
        let (gy, ac) = interp(0.5 * (t_cursor + t_next));
        integrate_step(
            &mut rot,
            &mut pos,
            &mut vel,
            &(gy - state.bias_gyro),
            &(ac - state.bias_accel),
            &state.gravity,
            dt,
        );
        t_cursor = t_next;
        entries.push(TimelineEntry {
            t: t_next,
            rot: rot0_inv * rot,
            pos: rot0_inv * (pos - pos0),
            vel: rot0_inv * vel,
        });
    }

    Ok(PoseTimeline { entries })
}

/// Aligns every point of `scan` to the scan start using the (LiDAR-frame)
/// timeline: `p = R p' + T` with `(R, T)` interpolated at the firing time.
pub fn undistort(scan: &RawScan, timeline: &PoseTimeline) -> Result<UndistortedScan> {
    let mut points = Vec::with_capacity(scan.points.len());
    for rp in &scan.points {
        let (rot, trans) = timeline.sample(scan.t0 + rp.dt)?;
        points.push(UndistortedPoint {
            pos: rot * rp.pos + trans,
            raw: rp.pos,
            dt: rp.dt,
            rot,
            cov: Mat3::zeros(),
        });
    }
    Ok(UndistortedScan {
        t0: scan.t0,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::RawPoint;
    use approx::assert_relative_eq;

    const G: f64 = 9.81;

    fn gravity() -> Vec3 {
        Vec3::new(0.0, 0.0, -G)
    }

    fn window_const(
        t0: f64,
        t1: f64,
        rate: f64,
        gyro: Vec3,
        accel: Vec3,
    ) -> ImuWindow {
        let dt = 1.0 / rate;
        let n = ((t1 - t0) / dt).round() as usize;
        let samples = (0..=n)
            .map(|i| ImuSample {
                t: t0 + i as f64 * dt,
                gyro,
                accel,
            })
            .collect();
        ImuWindow::new(samples).unwrap()
    }

    #[test]
    fn static_equilibrium_leaves_mean_unchanged() {
        let state = NavState::initial(gravity(), 0.0);
        let w = window_const(0.0, 1.0, 100.0, Vec3::zeros(), Vec3::new(0.0, 0.0, G));
        let out = propagate(&state, &w, &NoiseParams::default()).unwrap();
        assert_relative_eq!(out.pos, Vec3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(out.vel, Vec3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(*out.rot.matrix(), *Rot3::identity().matrix(), epsilon = 1e-12);
        assert!(out.cov.trace() > state.cov.trace());
    }

    #[test]
    fn constant_accel_closed_form() {
        let state = NavState::initial(gravity(), 0.0);
        // 1 m/s² along x, gravity compensated
        let w = window_const(0.0, 1.0, 200.0, Vec3::zeros(), Vec3::new(1.0, 0.0, G));
        let out = propagate(&state, &w, &NoiseParams::default()).unwrap();
        assert_relative_eq!(out.pos.x, 0.5, epsilon = 1e-6);
        assert_relative_eq!(out.vel.x, 1.0, epsilon = 1e-6);
        assert_relative_eq!(out.pos.y, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn covariance_trace_non_decreasing() {
        let state = NavState::initial(gravity(), 0.0);
        let w = window_const(0.0, 0.5, 100.0, Vec3::new(0.1, 0.0, 0.2), Vec3::new(0.0, 1.0, G));
        let mut prev = state.cov.trace();
        let mut s = state;
        for pair in w.samples().windows(2) {
            let sub = ImuWindow::new(vec![pair[0], pair[1]]).unwrap();
            s = propagate(&s, &sub, &NoiseParams::default()).unwrap();
            assert!(s.cov.trace() >= prev);
            prev = s.cov.trace();
        }
    }

    #[test]
    fn propagate_is_deterministic() {
        let state = NavState::initial(gravity(), 0.0);
        let w = window_const(0.0, 0.3, 100.0, Vec3::new(0.2, -0.1, 0.3), Vec3::new(0.5, 0.0, G));
        let a = propagate(&state, &w, &NoiseParams::default()).unwrap();
        let b = propagate(&state, &w, &NoiseParams::default()).unwrap();
        assert_eq!(a.pos, b.pos);
        assert_eq!(a.vel, b.vel);
        assert_eq!(a.rot, b.rot);
        assert_eq!(a.cov, b.cov);
    }

    #[test]
    fn rejects_non_monotonic_window() {
        let s = vec![
            ImuSample { t: 0.0, gyro: Vec3::zeros(), accel: Vec3::zeros() },
            ImuSample { t: 0.0, gyro: Vec3::zeros(), accel: Vec3::zeros() },
        ];
        assert!(matches!(
            ImuWindow::new(s),
            Err(Error::NonMonotonicTimestamps { .. })
        ));
    }

    #[test]
    fn timeline_static_is_identity() {
        let state = NavState::initial(gravity(), 0.0);
        let w = window_const(0.0, 0.1, 100.0, Vec3::zeros(), Vec3::new(0.0, 0.0, G));
        let tl = build_pose_timeline(&state, &w, 0.0, 0.1).unwrap();
        for e in tl.entries() {
            assert_relative_eq!(*e.rot.matrix(), *Rot3::identity().matrix(), epsilon = 1e-12);
            assert_relative_eq!(e.pos, Vec3::zeros(), epsilon = 1e-12);
        }
    }

    #[test]
    fn timeline_constant_gyro_closed_form() {
        let state = NavState::initial(gravity(), 0.0);
        let w = window_const(0.0, 0.1, 1000.0, Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 0.0, G));
        let tl = build_pose_timeline(&state, &w, 0.0, 0.1).unwrap();
        let last = tl.entries().last().unwrap();
        let expect = Rot3::exp(&Vec3::new(0.0, 0.0, 0.1));
        assert!((last.rot.matrix() - expect.matrix()).abs().max() < 1e-8);
    }

    #[test]
    fn timeline_first_entry_identity_and_velocity() {
        let mut state = NavState::initial(gravity(), 0.0);
        state.vel = Vec3::new(0.5, 0.0, 0.0);
        let w = window_const(0.0, 0.1, 100.0, Vec3::zeros(), Vec3::new(0.0, 0.0, G));
        let tl = build_pose_timeline(&state, &w, 0.0, 0.1).unwrap();
        let first = &tl.entries()[0];
        assert_eq!(first.t, 0.0);
        assert_eq!(*first.rot.matrix(), *Rot3::identity().matrix());
        assert_eq!(first.pos, Vec3::zeros());
        assert_relative_eq!(first.vel, Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn timeline_rejects_short_window() {
        let state = NavState::initial(gravity(), 0.0);
        let w = window_const(0.0, 0.05, 100.0, Vec3::zeros(), Vec3::new(0.0, 0.0, G));
        assert!(matches!(
            build_pose_timeline(&state, &w, 0.0, 0.1),
            Err(Error::WindowTooShort { .. })
        ));
    }

    #[test]
    fn undistort_identity_timeline_is_noop() {
        let state = NavState::initial(gravity(), 0.0);
        let w = window_const(0.0, 0.1, 100.0, Vec3::zeros(), Vec3::new(0.0, 0.0, G));
        let tl = build_pose_timeline(&state, &w, 0.0, 0.1).unwrap();
        let scan = RawScan {
            t0: 0.0,
            points: vec![
                RawPoint { pos: Vec3::new(1.0, 2.0, 3.0), dt: 0.03 },
                RawPoint { pos: Vec3::new(-4.0, 0.5, 1.0), dt: 0.09 },
            ],
        };
        let out = undistort(&scan, &tl).unwrap();
        for (o, i) in out.points.iter().zip(&scan.points) {
            assert_relative_eq!(o.pos, i.pos, epsilon = 1e-12);
        }
    }

    #[test]
    fn undistort_scan_start_point_unchanged() {
        let state = NavState::initial(gravity(), 0.0);
        // spinning fast; the t0 point must still be untouched
        let w = window_const(0.0, 0.1, 500.0, Vec3::new(0.0, 2.0, 1.0), Vec3::new(0.0, 0.0, G));
        let tl = build_pose_timeline(&state, &w, 0.0, 0.1).unwrap();
        let scan = RawScan {
            t0: 0.0,
            points: vec![RawPoint { pos: Vec3::new(5.0, -1.0, 0.2), dt: 0.0 }],
        };
        let out = undistort(&scan, &tl).unwrap();
        assert_relative_eq!(out.points[0].pos, scan.points[0].pos, epsilon = 1e-12);
        assert_eq!(out.points[0].dt, 0.0);
    }

    #[test]
    fn undistort_rejects_out_of_span_point() {
        let state = NavState::initial(gravity(), 0.0);
        let w = window_const(0.0, 0.1, 100.0, Vec3::zeros(), Vec3::new(0.0, 0.0, G));
        let tl = build_pose_timeline(&state, &w, 0.0, 0.1).unwrap();
        let scan = RawScan {
            t0: 0.0,
            points: vec![RawPoint { pos: Vec3::new(1.0, 0.0, 0.0), dt: 0.2 }],
        };
        assert!(matches!(
            undistort(&scan, &tl),
            Err(Error::TimestampOutOfRange { .. })
        ));
    }

    #[test]
    fn lidar_frame_conjugation_round_trip() {
        let mut state = NavState::initial(gravity(), 0.0);
        state.vel = Vec3::new(0.3, -0.2, 0.0);
        let w = window_const(0.0, 0.1, 200.0, Vec3::new(0.5, 0.8, -0.3), Vec3::new(0.2, 0.0, G));
        let tl = build_pose_timeline(&state, &w, 0.0, 0.1).unwrap();
        let ext = RigidTransform::new(
            Rot3::exp(&Vec3::new(0.1, -0.2, 0.4)),
            Vec3::new(0.05, 0.02, -0.1),
        );
        let tl_l = tl.to_lidar_frame(&ext);
        // conjugating a point through both routes must agree:
        // ext⁻¹ ∘ T_imu ∘ ext  ==  T_lidar
        let p = Vec3::new(3.0, -2.0, 1.0);
        for (e_i, e_l) in tl.entries().iter().zip(tl_l.entries()) {
            let via_imu = ext
                .inverse()
                .apply(&(e_i.rot * ext.apply(&p) + e_i.pos));
            let via_lidar = e_l.rot * p + e_l.pos;
            assert_relative_eq!(via_imu, via_lidar, epsilon = 1e-12);
        }
    }
}
