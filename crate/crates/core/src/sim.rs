//! Deterministic sensor simulator: planar-patch worlds, vibration profiles
//! with closed-form kinematics, raycast LiDAR scans with per-point
//! timestamps, and noisy discretized IMU streams.
//!
//! Everything is a pure function of (world, profile, rig, seed), so each
//! rendered dataset is bit-reproducible.

use crate::error::{Error, Result};
use crate::manifold::{right_jacobian, RigidTransform, Rot3, Vec3};
use crate::propagation::{ImuSample, ImuWindow, NoiseParams};
use crate::scan::{RawPoint, RawScan, UndistortedPoint, UndistortedScan};
use crate::trajectory::{TrajPose, Trajectory};
use crate::uncertainty::{tangent_basis, BeamNoiseModel};
use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A finite planar patch: `corner + a·edge_u + b·edge_v` for `a, b ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub corner: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
}

impl Patch {
    fn corner_v(&self) -> Vec3 {
        Vec3::from(self.corner)
    }
    fn u_v(&self) -> Vec3 {
        Vec3::from(self.edge_u)
    }
    fn v_v(&self) -> Vec3 {
        Vec3::from(self.edge_v)
    }

    /// Ray-patch intersection: distance along `dir` or None.
    fn raycast(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let u = self.u_v();
        let v = self.v_v();
        let n = u.cross(&v);
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.corner_v() - origin)) / denom;
        if t <= 1e-9 {
            return None;
        }
        let hit = origin + dir * t;
        let rel = hit - self.corner_v();
        // solve rel = a u + b v in the patch plane
        let uu = u.dot(&u);
        let vv = v.dot(&v);
        let uv = u.dot(&v);
        let ru = rel.dot(&u);
        let rv = rel.dot(&v);
        let det = uu * vv - uv * uv;
        let a = (ru * vv - rv * uv) / det;
        let b = (rv * uu - ru * uv) / det;
        if (-1e-9..=1.0 + 1e-9).contains(&a) && (-1e-9..=1.0 + 1e-9).contains(&b) {
            Some(t)
        } else {
            None
        }
    }

    /// Unsigned distance from a point to the (infinite) patch plane.
    pub fn plane_distance(&self, p: &Vec3) -> f64 {
        let n = self.u_v().cross(&self.v_v()).normalize();
        n.dot(&(p - self.corner_v())).abs()
    }
}

/// Synthetic world made of planar patches.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimWorld {
    pub patches: Vec<Patch>,
}

impl SimWorld {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.patches.iter().enumerate() {
            if p.u_v().cross(&p.v_v()).norm() < 1e-9 {
                return Err(Error::Config(format!("patch {i} has parallel edge vectors")));
            }
        }
        Ok(())
    }

    /// An axis-aligned room `[0,w]×[0,d]×[0,h]` as 6 inward patches.
    pub fn room(w: f64, d: f64, h: f64) -> Self {
        let patch = |corner: [f64; 3], eu: [f64; 3], ev: [f64; 3]| Patch {
            corner,
            edge_u: eu,
            edge_v: ev,
        };
        SimWorld {
            patches: vec![
                patch([0.0, 0.0, 0.0], [w, 0.0, 0.0], [0.0, d, 0.0]), // floor
                patch([0.0, 0.0, h], [w, 0.0, 0.0], [0.0, d, 0.0]),   // ceiling
                patch([0.0, 0.0, 0.0], [w, 0.0, 0.0], [0.0, 0.0, h]), // y = 0 wall
                patch([0.0, d, 0.0], [w, 0.0, 0.0], [0.0, 0.0, h]),   // y = d wall
                patch([0.0, 0.0, 0.0], [0.0, d, 0.0], [0.0, 0.0, h]), // x = 0 wall
                patch([w, 0.0, 0.0], [0.0, d, 0.0], [0.0, 0.0, h]),   // x = w wall
            ],
        }
    }

    /// Nearest hit of a ray across all patches, up to `max_range`.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<Vec3> {
        let mut best: Option<f64> = None;
        for p in &self.patches {
            if let Some(t) = p.raycast(origin, dir) {
                if t <= max_range && best.map_or(true, |b| t < b) {
                    best = Some(t);
                }
            }
        }
        best.map(|t| origin + dir * t)
    }

    /// Distance from `p` to the closest patch plane.
    pub fn nearest_plane_distance(&self, p: &Vec3) -> f64 {
        self.patches
            .iter()
            .map(|pa| pa.plane_distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// One additive sinusoid, `amplitude · sin(2π f t + phase)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    /// m for translation axes, rad for rotation axes.
    pub amplitude: f64,
    /// Hz; must be ≥ 0.
    pub frequency: f64,
    /// rad.
    #[serde(default)]
    pub phase: f64,
}

impl Sinusoid {
    fn value(&self, t: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        self.amplitude * (w * t + self.phase).sin()
    }
    fn d1(&self, t: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        self.amplitude * w * (w * t + self.phase).cos()
    }
    fn d2(&self, t: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        -self.amplitude * w * w * (w * t + self.phase).sin()
    }
}

/// Raised-cosine on/off envelope gating motion and vibration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub t_on: f64,
    pub t_off: f64,
    /// Ramp length (s); 0 switches instantaneously.
    #[serde(default)]
    pub ramp: f64,
}

impl Envelope {
    fn value(&self, t: f64) -> f64 {
        if t < self.t_on || t >= self.t_off {
            return 0.0;
        }
        if self.ramp <= 0.0 {
            return 1.0;
        }
        let tau = self.ramp;
        if t < self.t_on + tau {
            let u = (t - self.t_on) / tau;
            0.5 * (1.0 - (std::f64::consts::PI * u).cos())
        } else if t > self.t_off - tau {
            let u = (self.t_off - t) / tau;
            0.5 * (1.0 - (std::f64::consts::PI * u).cos())
        } else {
            1.0
        }
    }

    fn d1(&self, t: f64) -> f64 {
        if t < self.t_on || t >= self.t_off || self.ramp <= 0.0 {
            return 0.0;
        }
        let tau = self.ramp;
        let pi = std::f64::consts::PI;
        if t < self.t_on + tau {
            let u = (t - self.t_on) / tau;
            0.5 * pi / tau * (pi * u).sin()
        } else if t > self.t_off - tau {
            let u = (self.t_off - t) / tau;
            -0.5 * pi / tau * (pi * u).sin()
        } else {
            0.0
        }
    }

    fn d2(&self, t: f64) -> f64 {
        if t < self.t_on || t >= self.t_off || self.ramp <= 0.0 {
            return 0.0;
        }
        let tau = self.ramp;
        let pi = std::f64::consts::PI;
        if t < self.t_on + tau {
            let u = (t - self.t_on) / tau;
            0.5 * (pi / tau).powi(2) * (pi * u).cos()
        } else if t > self.t_off - tau {
            let u = (self.t_off - t) / tau;
            0.5 * (pi / tau).powi(2) * (pi * u).cos()
        } else {
            0.0
        }
    }

    /// `∫₀ᵗ e(u) du`.
    fn integral(&self, t: f64) -> f64 {
        if t <= self.t_on {
            return 0.0;
        }
        let tau = self.ramp.max(0.0);
        let pi = std::f64::consts::PI;
        let ramp_area = 0.5 * tau; // ∫ of the half-cosine ramp
        let up_end = self.t_on + tau;
        let down_start = self.t_off - tau;
        let mut s = 0.0;
        if tau > 0.0 {
            if t < up_end {
                let u = t - self.t_on;
                return 0.5 * (u - tau / pi * (pi * u / tau).sin());
            }
            s += ramp_area;
        }
        if t < down_start {
            return s + (t - up_end);
        }
        s += down_start - up_end;
        if tau > 0.0 {
            if t < self.t_off {
                let u = t - down_start;
                // ∫ ½(1+cos(π u/τ)) du on the down ramp
                return s + 0.5 * (u + tau / pi * (pi * u / tau).sin());
            }
            s += ramp_area;
        }
        s
    }
}

/// Base trajectory shape, gated by the profile envelope.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum BaseMotion {
    #[default]
    Static,
    /// Moves along `velocity` while the envelope is up.
    ConstantVelocity { velocity: [f64; 3] },
    /// Counter-clockwise circle, starting tangentially along +x with speed
    /// `radius * angular_rate`, yaw following the heading.
    Circle { radius: f64, angular_rate: f64 },
}

/// Prescribed true trajectory: base motion plus per-axis sinusoidal
/// vibration, with closed-form pose, velocity, body angular velocity and
/// world acceleration at any time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VibrationProfile {
    pub start_position: [f64; 3],
    #[serde(default)]
    pub base: BaseMotion,
    /// Gates both base motion and vibration.
    pub envelope: Envelope,
    /// Total duration (s).
    pub duration: f64,
    /// Translation sinusoids per world axis (x, y, z), m.
    #[serde(default)]
    pub vib_translation: [Vec<Sinusoid>; 3],
    /// Rotation-vector sinusoids per body axis (roll, pitch, yaw), rad.
    #[serde(default)]
    pub vib_rotation: [Vec<Sinusoid>; 3],
}

/// Pose and kinematics of the IMU body at one instant.
#[derive(Clone, Copy, Debug)]
pub struct ProfileSample {
    pub pose: RigidTransform,
    /// World-frame linear velocity (m/s).
    pub vel: Vec3,
    /// Body-frame angular velocity (rad/s).
    pub omega: Vec3,
    /// World-frame linear acceleration (m/s²).
    pub accel: Vec3,
}

impl VibrationProfile {
    pub fn validate(&self) -> Result<()> {
        if self.duration <= 0.0 {
            return Err(Error::Config("profile duration must be > 0".into()));
        }
        for axis in self.vib_translation.iter().chain(self.vib_rotation.iter()) {
            for s in axis {
                if s.frequency < 0.0 {
                    return Err(Error::Config("sinusoid frequency must be >= 0".into()));
                }
            }
        }
        if self.envelope.t_off < self.envelope.t_on {
            return Err(Error::Config("envelope t_off must be >= t_on".into()));
        }
        Ok(())
    }

    fn axis_sum(list: &[Sinusoid], t: f64) -> (f64, f64, f64) {
        let mut v = 0.0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for s in list {
            v += s.value(t);
            d1 += s.d1(t);
            d2 += s.d2(t);
        }
        (v, d1, d2)
    }

    /// Closed-form evaluation of pose and derivatives at `t`.
    pub fn pose_at(&self, t: f64) -> Result<ProfileSample> {
        if t < 0.0 || t > self.duration {
            return Err(Error::OutOfDuration {
                t,
                duration: self.duration,
            });
        }
        let e = self.envelope.value(t);
        let de = self.envelope.d1(t);
        let dde = self.envelope.d2(t);
        let s_int = self.envelope.integral(t);
        let start = Vec3::from(self.start_position);

        // base motion
        let (mut pos, mut vel, mut acc, base_rot, omega_base);
        match self.base {
            BaseMotion::Static => {
                pos = start;
                vel = Vec3::zeros();
                acc = Vec3::zeros();
                base_rot = Rot3::identity();
                omega_base = Vec3::zeros();
            }
            BaseMotion::ConstantVelocity { velocity } => {
                let v = Vec3::from(velocity);
                pos = start + v * s_int;
                vel = v * e;
                acc = v * de;
                base_rot = Rot3::identity();
                omega_base = Vec3::zeros();
            }
            BaseMotion::Circle {
                radius,
                angular_rate,
            } => {
                let center = start + Vec3::new(0.0, radius, 0.0);
                let theta = angular_rate * s_int;
                let dtheta = angular_rate * e;
                let ddtheta = angular_rate * de;
                let (sin_t, cos_t) = theta.sin_cos();
                pos = center + radius * Vec3::new(sin_t, -cos_t, 0.0);
                vel = radius * dtheta * Vec3::new(cos_t, sin_t, 0.0);
                acc = radius
                    * (ddtheta * Vec3::new(cos_t, sin_t, 0.0)
                        + dtheta * dtheta * Vec3::new(-sin_t, cos_t, 0.0));
                base_rot = Rot3::exp(&Vec3::new(0.0, 0.0, theta));
                omega_base = Vec3::new(0.0, 0.0, dtheta);
            }
        }

        // translational vibration (world axes)
        let mut theta_vib = Vec3::zeros();
        let mut dtheta_vib = Vec3::zeros();
        for axis in 0..3 {
            let (v, d1, d2) = Self::axis_sum(&self.vib_translation[axis], t);
            pos[axis] += e * v;
            vel[axis] += de * v + e * d1;
            acc[axis] += dde * v + 2.0 * de * d1 + e * d2;
            let (rv, rd1, _) = Self::axis_sum(&self.vib_rotation[axis], t);
            theta_vib[axis] = e * rv;
            dtheta_vib[axis] = de * rv + e * rd1;
        }

        let rot_vib = Rot3::exp(&theta_vib);
        let rot = base_rot * rot_vib;
        // body rate: Ṙ = R⌊ω⌋ with R = R_base · Exp(θ):
        // ω = Exp(θ)ᵀ ω_base + Jr(θ) θ̇
        let omega = rot_vib.inverse() * omega_base + right_jacobian(&theta_vib) * dtheta_vib;

        Ok(ProfileSample {
            pose: RigidTransform::new(rot, pos),
            vel,
            omega,
            accel: acc,
        })
    }

    /// Ground-truth trajectory sampled at the given times, relative to the
    /// pose at the first time (odometry convention).
    pub fn truth_trajectory(&self, times: &[f64]) -> Result<Trajectory> {
        let mut poses = Vec::with_capacity(times.len());
        let mut origin: Option<RigidTransform> = None;
        for &t in times {
            let s = self.pose_at(t)?;
            let o = origin.get_or_insert_with(|| s.pose.inverse());
            let rel = o.compose(&s.pose);
            poses.push(TrajPose {
                t,
                rot: rel.rot,
                pos: rel.trans,
            });
        }
        Ok(Trajectory { poses })
    }
}

/// LiDAR beam pattern and timing.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarModel {
    pub channels: usize,
    pub columns: usize,
    /// Scan period (s).
    pub period: f64,
    pub max_range: f64,
    /// Elevation of the lowest channel (deg).
    pub fov_down_deg: f64,
    /// Elevation of the highest channel (deg).
    pub fov_up_deg: f64,
    pub beam_noise: BeamNoiseModel,
}

impl Default for LidarModel {
    fn default() -> Self {
        LidarModel {
            channels: 32,
            columns: 320,
            period: 0.1,
            max_range: 30.0,
            fov_down_deg: -22.5,
            fov_up_deg: 22.5,
            beam_noise: BeamNoiseModel::default(),
        }
    }
}

/// The simulated sensor head: LiDAR + IMU and their rigid offset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorRig {
    /// LiDAR-to-IMU extrinsics ᴵT_L as (rotation vector rad, translation m).
    #[serde(default)]
    pub extrinsic_rotvec: [f64; 3],
    #[serde(default)]
    pub extrinsic_translation: [f64; 3],
    pub lidar: LidarModel,
    /// IMU sample rate (Hz).
    pub imu_rate: f64,
    pub imu_noise: NoiseParams,
    /// True constant gyro bias (rad/s).
    #[serde(default)]
    pub bias_gyro: [f64; 3],
    /// True constant accel bias (m/s²).
    #[serde(default)]
    pub bias_accel: [f64; 3],
    /// Gravity vector in the world frame (m/s²).
    pub gravity: [f64; 3],
}

impl Default for SensorRig {
    fn default() -> Self {
        SensorRig {
            extrinsic_rotvec: [0.0; 3],
            extrinsic_translation: [0.0; 3],
            lidar: LidarModel::default(),
            imu_rate: 100.0,
            imu_noise: NoiseParams::default(),
            bias_gyro: [0.0; 3],
            bias_accel: [0.0; 3],
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

impl SensorRig {
    pub fn extrinsics(&self) -> RigidTransform {
        RigidTransform::new(
            Rot3::exp(&Vec3::from(self.extrinsic_rotvec)),
            Vec3::from(self.extrinsic_translation),
        )
    }

    pub fn gravity_v(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lidar.period <= 0.0 {
            return Err(Error::Config("scan period must be > 0".into()));
        }
        if self.imu_rate < 10.0 / self.lidar.period {
            return Err(Error::Config(
                "IMU rate must be at least 10x the scan rate".into(),
            ));
        }
        if self.lidar.channels < 1 || self.lidar.columns < 2 {
            return Err(Error::Config("lidar needs >= 1 channel, >= 2 columns".into()));
        }
        let g = self.gravity_v().norm();
        if !(9.5..=10.1).contains(&g) {
            return Err(Error::Config(format!(
                "gravity magnitude {g} outside [9.5, 10.1]"
            )));
        }
        self.imu_noise.validate()?;
        self.lidar.beam_noise.validate()
    }
}

/// Renders one scan: raw points in the LiDAR frame at each firing time (with
/// beam noise), and the matching ground-truth points re-expressed in the
/// LiDAR frame at scan start (noise-free).
///
/// Beams fire column by column, uniformly across the period; all channels of
/// a column share its firing time.
pub fn render_scan(
    world: &SimWorld,
    profile: &VibrationProfile,
    rig: &SensorRig,
    t0: f64,
    rng: &mut impl Rng,
) -> Result<(RawScan, UndistortedScan)> {
    let lidar = &rig.lidar;
    if t0 + lidar.period > profile.duration {
        return Err(Error::OutOfDuration {
            t: t0 + lidar.period,
            duration: profile.duration,
        });
    }
    let ext = rig.extrinsics();
    let pose_l_at = |t: f64| -> Result<RigidTransform> {
        Ok(profile.pose_at(t)?.pose.compose(&ext))
    };
    let pose_l0 = pose_l_at(t0)?;
    let pose_l0_inv = pose_l0.inverse();

    let mut raw_points = Vec::new();
    let mut gt_points = Vec::new();
    let fov_down = lidar.fov_down_deg.to_radians();
    let fov_up = lidar.fov_up_deg.to_radians();
    let normal = rand_distr::StandardNormal;

    for col in 0..lidar.columns {
        let dt = lidar.period * col as f64 / lidar.columns as f64;
        let t = t0 + dt;
        let pose_l = pose_l_at(t)?;
        let pose_l_inv = pose_l.inverse();
        let azimuth = 2.0 * std::f64::consts::PI * col as f64 / lidar.columns as f64;
        for ch in 0..lidar.channels {
            let elev = if lidar.channels == 1 {
                0.5 * (fov_down + fov_up)
            } else {
                fov_down + (fov_up - fov_down) * ch as f64 / (lidar.channels - 1) as f64
            };
            let dir_l = Vec3::new(
                elev.cos() * azimuth.cos(),
                elev.cos() * azimuth.sin(),
                elev.sin(),
            );
            let dir_w = pose_l.rot * dir_l;
            let Some(hit_w) = world.raycast(&pose_l.trans, &dir_w, lidar.max_range) else {
                continue;
            };
            // true return in the firing-time LiDAR frame
            let p_true = pose_l_inv.apply(&hit_w);
            // beam noise in the A_p basis: range along the bearing, bearing
            // in the tangent plane scaled by range
            let noise = &lidar.beam_noise;
            let p_meas = if noise.sigma_range > 0.0 || noise.sigma_bearing > 0.0 {
                let d = p_true.norm();
                let phi = p_true / d;
                let (o1, o2) = tangent_basis(&phi);
                let xi_d: f64 = rng.sample(normal);
                let xi_1: f64 = rng.sample(normal);
                let xi_2: f64 = rng.sample(normal);
                p_true + phi * (noise.sigma_range * xi_d)
                    - d * phi.cross(&o1) * (noise.sigma_bearing * xi_1)
                    - d * phi.cross(&o2) * (noise.sigma_bearing * xi_2)
            } else {
                p_true
            };
            raw_points.push(RawPoint { pos: p_meas, dt });
            // ground truth: same hit, noise-free, in the scan-start frame
            let p_gt = pose_l0_inv.apply(&hit_w);
            let rel = pose_l0_inv.compose(&pose_l);
            gt_points.push(UndistortedPoint {
                pos: p_gt,
                raw: p_meas,
                dt,
                rot: rel.rot,
                cov: Matrix3::zeros(),
            });
        }
    }

    Ok((
        RawScan {
            t0,
            points: raw_points,
        },
        UndistortedScan {
            t0,
            points: gt_points,
        },
    ))
}

/// Samples the profile kinematics into a noisy, biased IMU stream on the
/// global sample grid `n / rate` over `[t0, t1]`.
pub fn synthesize_imu(
    profile: &VibrationProfile,
    rig: &SensorRig,
    t0: f64,
    t1: f64,
    rng: &mut impl Rng,
) -> Result<ImuWindow> {
    if t1 <= t0 {
        return Err(Error::Config("synthesize_imu needs t1 > t0".into()));
    }
    let rate = rig.imu_rate;
    let dt = 1.0 / rate;
    let sigma_g = rig.imu_noise.sigma_gyro / dt.sqrt();
    let sigma_a = rig.imu_noise.sigma_accel / dt.sqrt();
    let bias_g = Vec3::from(rig.bias_gyro);
    let bias_a = Vec3::from(rig.bias_accel);
    let gravity = rig.gravity_v();
    let normal = rand_distr::StandardNormal;

    let n_start = (t0 * rate).ceil() as i64;
    let n_end = (t1 * rate).floor() as i64;
    let mut samples = Vec::with_capacity((n_end - n_start + 1).max(0) as usize);
    for n in n_start..=n_end {
        let t = n as f64 / rate;
        let s = profile.pose_at(t)?;
        let mut gyro = s.omega + bias_g;
        let mut accel = s.pose.rot.inverse() * (s.accel - gravity) + bias_a;
        if sigma_g > 0.0 {
            gyro += Vec3::new(rng.sample(normal), rng.sample(normal), rng.sample(normal))
                * sigma_g;
        }
        if sigma_a > 0.0 {
            accel += Vec3::new(rng.sample(normal), rng.sample(normal), rng.sample(normal))
                * sigma_a;
        }
        samples.push(ImuSample { t, gyro, accel });
    }
    ImuWindow::new(samples)
}

/// End-time error against the initial reference pose: the estimate is
/// averaged over the trailing `settle_window` seconds and compared to the
/// truth's first pose. Returns (translation m, rotation deg).
pub fn end_time_error(
    estimated: &Trajectory,
    truth: &Trajectory,
    settle_window: f64,
) -> Result<(f64, f64)> {
    let est = &estimated.poses;
    let tru = &truth.poses;
    if est.is_empty() || tru.is_empty() {
        return Err(Error::WindowUncovered {
            window: settle_window,
        });
    }
    let t_end = est[est.len() - 1].t;
    let t_from = t_end - settle_window;
    if t_from < est[0].t - 1e-9 || tru[tru.len() - 1].t < t_from {
        return Err(Error::WindowUncovered {
            window: settle_window,
        });
    }
    let tail: Vec<&TrajPose> = est.iter().filter(|p| p.t >= t_from).collect();
    if tail.is_empty() {
        return Err(Error::WindowUncovered {
            window: settle_window,
        });
    }
    let mean_pos = tail.iter().map(|p| p.pos).sum::<Vec3>() / tail.len() as f64;
    // chordal rotation mean: project the summed matrices back onto SO(3)
    let mut acc = Matrix3::<f64>::zeros();
    for p in &tail {
        acc += p.rot.matrix();
    }
    let mean_rot = Rot3::project(&acc);

    let reference = &tru[0];
    let trans_err = (mean_pos - reference.pos).norm();
    let rot_err = reference.rot.angle_to(&mean_rot).to_degrees();
    Ok((trans_err, rot_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn static_profile(duration: f64) -> VibrationProfile {
        VibrationProfile {
            start_position: [3.0, 3.0, 1.2],
            base: BaseMotion::Static,
            envelope: Envelope {
                t_on: 0.0,
                t_off: duration,
                ramp: 0.0,
            },
            duration,
            vib_translation: Default::default(),
            vib_rotation: Default::default(),
        }
    }

    fn vibrating_profile(duration: f64) -> VibrationProfile {
        let mut p = static_profile(duration);
        p.vib_rotation[1] = vec![Sinusoid {
            amplitude: 0.035,
            frequency: 2.0,
            phase: 0.0,
        }];
        p.vib_translation[2] = vec![Sinusoid {
            amplitude: 0.04,
            frequency: 1.0,
            phase: 0.0,
        }];
        p
    }

    #[test]
    fn static_profile_has_zero_derivatives() {
        let p = static_profile(10.0);
        let s = p.pose_at(4.2).unwrap();
        assert_eq!(s.vel, Vec3::zeros());
        assert_eq!(s.omega, Vec3::zeros());
        assert_eq!(s.accel, Vec3::zeros());
        assert_eq!(s.pose.trans, Vec3::new(3.0, 3.0, 1.2));
    }

    #[test]
    fn sinusoid_velocity_at_zero_phase() {
        // z(t) = A sin(2π f t) ⇒ ż(0) = 2π f A
        let mut p = static_profile(10.0);
        let (a, f) = (0.05, 1.5);
        p.vib_translation[2] = vec![Sinusoid {
            amplitude: a,
            frequency: f,
            phase: 0.0,
        }];
        let s = p.pose_at(0.0).unwrap();
        assert_relative_eq!(s.vel.z, 2.0 * std::f64::consts::PI * f * a, epsilon = 1e-12);
    }

    #[test]
    fn pose_at_rejects_out_of_duration() {
        let p = static_profile(1.0);
        assert!(matches!(p.pose_at(1.5), Err(Error::OutOfDuration { .. })));
        assert!(matches!(p.pose_at(-0.1), Err(Error::OutOfDuration { .. })));
    }

    #[test]
    fn integrating_omega_recovers_orientation() {
        let mut p = vibrating_profile(4.0);
        p.envelope.ramp = 0.5;
        p.vib_rotation[2] = vec![Sinusoid {
            amplitude: 0.02,
            frequency: 3.0,
            phase: 0.7,
        }];
        let dt = 1e-4;
        let steps = (3.0 / dt) as usize;
        let mut rot = p.pose_at(0.0).unwrap().pose.rot;
        for i in 0..steps {
            let t_mid = (i as f64 + 0.5) * dt;
            let omega = p.pose_at(t_mid).unwrap().omega;
            rot = rot * Rot3::exp(&(omega * dt));
        }
        let expect = p.pose_at(3.0).unwrap().pose.rot;
        let err = rot.angle_to(&expect);
        assert!(err < 1e-5, "omega integration drift: {err}");
    }

    #[test]
    fn integrating_velocity_recovers_position() {
        let mut p = vibrating_profile(4.0);
        p.envelope.ramp = 0.5;
        p.base = BaseMotion::Circle {
            radius: 1.5,
            angular_rate: 0.4,
        };
        let dt = 1e-4;
        let steps = (3.5 / dt) as usize;
        let mut pos = p.pose_at(0.0).unwrap().pose.trans;
        for i in 0..steps {
            let t_mid = (i as f64 + 0.5) * dt;
            pos += p.pose_at(t_mid).unwrap().vel * dt;
        }
        let expect = p.pose_at(3.5).unwrap().pose.trans;
        assert!((pos - expect).norm() < 1e-5);
    }

    #[test]
    fn integrating_accel_recovers_velocity() {
        let mut p = vibrating_profile(4.0);
        p.envelope.ramp = 0.5;
        let dt = 1e-4;
        let steps = (3.5 / dt) as usize;
        let mut vel = p.pose_at(0.0).unwrap().vel;
        for i in 0..steps {
            let t_mid = (i as f64 + 0.5) * dt;
            vel += p.pose_at(t_mid).unwrap().accel * dt;
        }
        let expect = p.pose_at(3.5).unwrap().vel;
        assert!((vel - expect).norm() < 1e-5);
    }

    #[test]
    fn render_static_matches_raw_and_gt() {
        let world = SimWorld::room(6.0, 6.0, 3.0);
        let p = static_profile(1.0);
        let mut rig = SensorRig::default();
        rig.lidar.beam_noise = BeamNoiseModel {
            sigma_range: 0.0,
            sigma_bearing: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (raw, gt) = render_scan(&world, &p, &rig, 0.1, &mut rng).unwrap();
        assert!(!raw.points.is_empty());
        for (r, g) in raw.points.iter().zip(&gt.points) {
            assert_relative_eq!(r.pos, g.pos, epsilon = 1e-9);
        }
    }

    #[test]
    fn render_vibrating_gt_points_on_patches() {
        let world = SimWorld::room(6.0, 6.0, 3.0);
        let p = vibrating_profile(2.0);
        let mut rig = SensorRig::default();
        rig.lidar.beam_noise = BeamNoiseModel {
            sigma_range: 0.0,
            sigma_bearing: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t0 = 0.5;
        let (raw, gt) = render_scan(&world, &p, &rig, t0, &mut rng).unwrap();
        let ext = rig.extrinsics();
        let pose_l0 = p.pose_at(t0).unwrap().pose.compose(&ext);
        let mut max_plane = 0.0f64;
        let mut raw_off_plane = 0usize;
        for g in &gt.points {
            let w = pose_l0.apply(&g.pos);
            max_plane = max_plane.max(world.nearest_plane_distance(&w));
        }
        for r in &raw.points {
            // raw points re-expressed naively at t0 do NOT lie on the walls
            let w = pose_l0.apply(&r.pos);
            if world.nearest_plane_distance(&w) > 1e-4 {
                raw_off_plane += 1;
            }
        }
        assert!(max_plane < 1e-9, "gt points must sit on patches: {max_plane}");
        assert!(raw_off_plane > raw.points.len() / 4, "vibration must distort");
    }

    #[test]
    fn render_first_column_has_zero_displacement() {
        let world = SimWorld::room(6.0, 6.0, 3.0);
        let p = vibrating_profile(2.0);
        let mut rig = SensorRig::default();
        rig.lidar.beam_noise = BeamNoiseModel {
            sigma_range: 0.0,
            sigma_bearing: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (raw, gt) = render_scan(&world, &p, &rig, 0.4, &mut rng).unwrap();
        for (r, g) in raw.points.iter().zip(&gt.points).filter(|(r, _)| r.dt == 0.0) {
            assert_relative_eq!(r.pos, g.pos, epsilon = 1e-12);
        }
    }

    #[test]
    fn render_distortion_magnitude_first_order_bound() {
        // 2 Hz pitch vibration with amplitude A: peak angular rate is
        // A·2πf, so a point at range d sampled δt after scan start moves by
        // about A·2πf·δt·d when the vibration is near its zero crossing.
        let world = SimWorld::room(6.0, 6.0, 3.0);
        let amp = 0.035;
        let freq = 2.0;
        let mut p = static_profile(2.0);
        p.vib_rotation[1] = vec![Sinusoid {
            amplitude: amp,
            frequency: freq,
            phase: 0.0,
        }];
        let mut rig = SensorRig::default();
        rig.lidar.beam_noise = BeamNoiseModel {
            sigma_range: 0.0,
            sigma_bearing: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // t0 = 0.5: sin(2π·2·0.5) = 0, rate at its peak
        let (raw, gt) = render_scan(&world, &p, &rig, 0.5, &mut rng).unwrap();
        let omega_peak = amp * 2.0 * std::f64::consts::PI * freq;
        let mut checked = 0;
        for (r, g) in raw.points.iter().zip(&gt.points) {
            if r.dt < 0.01 || r.dt > 0.02 {
                continue;
            }
            let d = r.pos.norm();
            let disp = (r.pos - g.pos).norm();
            let bound = omega_peak * r.dt * d;
            if bound < 1e-4 {
                continue;
            }
            assert!(
                disp <= bound * 1.2,
                "displacement {disp} exceeds first-order bound {bound}"
            );
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn synthesize_imu_static_reads_minus_gravity() {
        let p = static_profile(2.0);
        let mut rig = SensorRig::default();
        rig.imu_noise = NoiseParams {
            sigma_gyro: 0.0,
            sigma_accel: 0.0,
            sigma_bias_gyro_walk: 0.0,
            sigma_bias_accel_walk: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = synthesize_imu(&p, &rig, 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(w.len(), 101);
        for s in w.samples() {
            assert_eq!(s.gyro, Vec3::zeros());
            assert_relative_eq!(s.accel, Vec3::new(0.0, 0.0, 9.81), epsilon = 1e-12);
        }
    }

    #[test]
    fn synthesize_imu_same_seed_identical() {
        let p = vibrating_profile(2.0);
        let rig = SensorRig::default();
        let w1 = synthesize_imu(&p, &rig, 0.0, 2.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let w2 = synthesize_imu(&p, &rig, 0.0, 2.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(w1.samples(), w2.samples());
    }

    #[test]
    fn end_time_error_static_zero() {
        let poses: Vec<TrajPose> = (0..100)
            .map(|i| TrajPose {
                t: i as f64 * 0.1,
                rot: Rot3::identity(),
                pos: Vec3::zeros(),
            })
            .collect();
        let traj = Trajectory { poses };
        let (te, re) = end_time_error(&traj, &traj, 2.0).unwrap();
        assert_eq!(te, 0.0);
        assert_eq!(re, 0.0);
    }

    #[test]
    fn end_time_error_offset_and_yaw() {
        let truth = Trajectory {
            poses: (0..100)
                .map(|i| TrajPose {
                    t: i as f64 * 0.1,
                    rot: Rot3::identity(),
                    pos: Vec3::zeros(),
                })
                .collect(),
        };
        let est = Trajectory {
            poses: (0..100)
                .map(|i| TrajPose {
                    t: i as f64 * 0.1,
                    rot: Rot3::exp(&Vec3::new(0.0, 0.0, 1f64.to_radians())),
                    pos: Vec3::new(0.0, 0.0, 0.0219),
                })
                .collect(),
        };
        let (te, re) = end_time_error(&est, &truth, 2.0).unwrap();
        assert_relative_eq!(te, 0.0219, epsilon = 1e-12);
        assert_relative_eq!(re, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn end_time_error_uncovered_window() {
        let short = Trajectory {
            poses: vec![TrajPose {
                t: 0.0,
                rot: Rot3::identity(),
                pos: Vec3::zeros(),
            }],
        };
        assert!(matches!(
            end_time_error(&short, &short, 2.0),
            Err(Error::WindowUncovered { .. })
        ));
    }

    #[test]
    fn room_validates() {
        SimWorld::room(6.0, 6.0, 3.0).validate().unwrap();
    }
}
