//! Vibration intensity estimation and point-wise post-undistortion
//! covariance.
//!
//! Per scan, the angular and linear vibration intensities are the per-axis
//! spread of the LiDAR-frame velocities over the scan's IMU window. Each
//! undistorted point then gets a covariance that grows with its time offset
//! from scan start:
//!
//! ```text
//! σ_r = γ δt k_ω         σ_T = γ δt k_v
//! Σ_p = ⌊p⌋ₓ diag(σ_r²) ⌊p⌋ₓᵀ + diag(σ_T²) + R Σ_meas Rᵀ
//! ```
//!
//! The diagonal of the beam model is interpreted as *variances*
//! (σ_d², σ_φ²); the Monte-Carlo test at the bottom of this module pins that
//! choice.

use crate::error::{Error, Result};
use crate::manifold::{skew, Mat3, RigidTransform, Vec3};
use crate::propagation::{ImuWindow, PoseTimeline};
use crate::scan::UndistortedScan;
use serde::{Deserialize, Serialize};

/// Covariance floor added before any inversion of a point covariance (m²).
/// Keeps Mahalanobis distances defined for zero-vibration, zero-bearing-noise
/// configurations.
pub const COV_FLOOR: f64 = 1e-8;

/// Per-beam LiDAR noise model.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct BeamNoiseModel {
    /// Range standard deviation σ_d (m).
    pub sigma_range: f64,
    /// Bearing standard deviation σ_φ (rad).
    pub sigma_bearing: f64,
}

impl BeamNoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_range < 0.0 || self.sigma_bearing < 0.0 {
            return Err(Error::Config("beam noise sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for BeamNoiseModel {
    fn default() -> Self {
        BeamNoiseModel {
            sigma_range: 0.01,
            sigma_bearing: 0.001,
        }
    }
}

/// How velocity spread over a scan window is summarized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum DeviationMode {
    /// Mean absolute deviation (the default heuristic).
    #[default]
    Mad,
    /// Population standard deviation.
    Std,
    /// RMS residual of a per-axis linear least-squares fit over time.
    Lls,
}

/// Per-scan vibration intensity.
#[derive(Clone, Copy, Debug)]
pub struct VibrationIntensity {
    /// Angular intensity k_ω, per axis (rad/s).
    pub k_omega: Vec3,
    /// Linear intensity k_v, per axis (m/s).
    pub k_v: Vec3,
    /// Mean LiDAR-frame angular velocity over the window (rad/s).
    pub omega_ave: Vec3,
    /// Mean LiDAR-frame linear velocity over the window (m/s).
    pub v_ave: Vec3,
}

impl VibrationIntensity {
    pub fn zero() -> Self {
        VibrationIntensity {
            k_omega: Vec3::zeros(),
            k_v: Vec3::zeros(),
            omega_ave: Vec3::zeros(),
            v_ave: Vec3::zeros(),
        }
    }
}

/// Uncertainty scaling configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct UncertaintyConfig {
    /// Scale γ mapping intensity × time offset to a sigma. 0.1 suits a
    /// 100–200 Hz IMU.
    pub gamma: f64,
    pub deviation_mode: DeviationMode,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            gamma: 0.1,
            deviation_mode: DeviationMode::Mad,
        }
    }
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config("gamma must be > 0".into()));
        }
        Ok(())
    }
}

/// LiDAR-frame angular and linear velocity at each timeline entry:
/// `ω_L = ᴵR_Lᵀ ω_I` and `v_L = ᴵR_Lᵀ ᴵR_G ᴳv_I`.
///
/// The gyro is used raw; the deviation statistics below are shift-invariant,
/// so a constant bias does not affect the intensity.
pub fn lidar_frame_velocities(
    window: &ImuWindow,
    timeline: &PoseTimeline,
    extrinsics: &RigidTransform,
) -> Vec<(Vec3, Vec3)> {
    let r_l_inv = extrinsics.rot.inverse();
    timeline
        .entries()
        .iter()
        .map(|e| {
            let omega_i = window.gyro_at(e.t);
            // e.vel is the world velocity in the scan-start IMU frame;
            // rotating by e.rotᵀ gives it in the IMU frame at t, i.e. ᴵR_G ᴳv.
            let v_i = e.rot.inverse() * e.vel;
            (r_l_inv * omega_i, r_l_inv * v_i)
        })
        .collect()
}

fn spread(values: &[f64], times: &[f64], mode: DeviationMode) -> f64 {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    match mode {
        DeviationMode::Mad => values.iter().map(|x| (x - mean).abs()).sum::<f64>() / m,
        DeviationMode::Std => {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m).sqrt()
        }
        DeviationMode::Lls => {
            // residual RMS of x ≈ a + b t
            let t_mean = times.iter().sum::<f64>() / m;
            let mut stt = 0.0;
            let mut stx = 0.0;
            for (&t, &x) in times.iter().zip(values) {
                stt += (t - t_mean) * (t - t_mean);
                stx += (t - t_mean) * (x - mean);
            }
            let b = if stt > 0.0 { stx / stt } else { 0.0 };
            let a = mean - b * t_mean;
            let ss = times
                .iter()
                .zip(values)
                .map(|(&t, &x)| (x - a - b * t).powi(2))
                .sum::<f64>();
            (ss / m).sqrt()
        }
    }
}

/// Per-axis vibration intensity of a velocity list. `times` must parallel
/// `velocities` (only the LLS mode reads it).
pub fn vibration_intensity(
    velocities: &[(Vec3, Vec3)],
    times: &[f64],
    mode: DeviationMode,
) -> Result<VibrationIntensity> {
    let m = velocities.len();
    if m < 2 {
        return Err(Error::InsufficientSamples { got: m });
    }
    let mf = m as f64;
    let omega_ave = velocities.iter().map(|v| v.0).sum::<Vec3>() / mf;
    let v_ave = velocities.iter().map(|v| v.1).sum::<Vec3>() / mf;

    let mut k_omega = Vec3::zeros();
    let mut k_v = Vec3::zeros();
    for axis in 0..3 {
        let om: Vec<f64> = velocities.iter().map(|v| v.0[axis]).collect();
        let vv: Vec<f64> = velocities.iter().map(|v| v.1[axis]).collect();
        k_omega[axis] = spread(&om, times, mode);
        k_v[axis] = spread(&vv, times, mode);
    }
    Ok(VibrationIntensity {
        k_omega,
        k_v,
        omega_ave,
        v_ave,
    })
}

/// Sigma vectors for one point: `σ_r = γ δt k_ω`, `σ_T = γ δt k_v`.
pub fn point_sigmas(
    intensity: &VibrationIntensity,
    dt_j0: f64,
    cfg: &UncertaintyConfig,
) -> (Vec3, Vec3) {
    let s = cfg.gamma * dt_j0;
    (intensity.k_omega * s, intensity.k_v * s)
}

/// Rotational covariance `⌊p⌋ₓ diag(σ_r²) ⌊p⌋ₓᵀ`.
pub fn rotational_covariance(p: &Vec3, sigma_r: &Vec3) -> Mat3 {
    let s = skew(p);
    let d = Mat3::from_diagonal(&sigma_r.map(|x| x * x));
    s * d * s.transpose()
}

/// Translational covariance `diag(σ_T²)`.
pub fn translational_covariance(sigma_t: &Vec3) -> Mat3 {
    Mat3::from_diagonal(&sigma_t.map(|x| x * x))
}

/// Deterministic orthonormal tangent basis at a unit bearing: Gram–Schmidt
/// against the coordinate axis least aligned with `phi`.
pub fn tangent_basis(phi: &Vec3) -> (Vec3, Vec3) {
    let abs = phi.map(f64::abs);
    let seed = if abs.x <= abs.y && abs.x <= abs.z {
        Vec3::new(1.0, 0.0, 0.0)
    } else if abs.y <= abs.z {
        Vec3::new(0.0, 1.0, 0.0)
    } else {
        Vec3::new(0.0, 0.0, 1.0)
    };
    let o1 = (seed - phi * phi.dot(&seed)).normalize();
    let o2 = phi.cross(&o1);
    (o1, o2)
}

/// Beam measurement covariance `A_p diag(σ_d², σ_φ², σ_φ²) A_pᵀ` with
/// `A_p = [φ, −d ⌊φ⌋ₓ O(φ)]`, built from the raw (pre-undistortion) point.
pub fn measurement_covariance(p_raw: &Vec3, beam: &BeamNoiseModel) -> Result<Mat3> {
    let d = p_raw.norm();
    if d <= 0.0 {
        return Err(Error::ZeroRangePoint);
    }
    let phi = p_raw / d;
    let (o1, o2) = tangent_basis(&phi);
    let col1 = -d * skew(&phi) * o1;
    let col2 = -d * skew(&phi) * o2;
    let a_p = Mat3::from_columns(&[phi, col1, col2]);
    let diag = Mat3::from_diagonal(&Vec3::new(
        beam.sigma_range * beam.sigma_range,
        beam.sigma_bearing * beam.sigma_bearing,
        beam.sigma_bearing * beam.sigma_bearing,
    ));
    Ok(a_p * diag * a_p.transpose())
}

/// The three covariance blocks of one point and their sum.
#[derive(Clone, Copy, Debug)]
pub struct PointCovariance {
    pub sigma_rot: Mat3,
    pub sigma_trans: Mat3,
    pub sigma_meas: Mat3,
    /// `sigma_rot + sigma_trans + R sigma_meas Rᵀ`.
    pub total: Mat3,
}

/// Composes the post-undistortion covariance of one point. `p` must carry
/// its undistortion rotation and raw position; the second-order cross term
/// of the error model is dropped.
pub fn total_covariance(
    p: &crate::scan::UndistortedPoint,
    sigma_r: &Vec3,
    sigma_t: &Vec3,
    beam: &BeamNoiseModel,
) -> Result<PointCovariance> {
    let sigma_rot = rotational_covariance(&p.pos, sigma_r);
    let sigma_trans = translational_covariance(sigma_t);
    let sigma_meas = measurement_covariance(&p.raw, beam)?;
    let r = p.rot.matrix();
    let total = sigma_rot + sigma_trans + r * sigma_meas * r.transpose();
    Ok(PointCovariance {
        sigma_rot,
        sigma_trans,
        sigma_meas,
        total,
    })
}

/// Fills `cov` for every point of the scan from the scan's vibration
/// intensity. With `vibration_aware` off, only the rotated beam covariance is
/// kept (the uncertainty-modeling ablation).
pub fn assign_covariances(
    scan: &mut UndistortedScan,
    intensity: &VibrationIntensity,
    beam: &BeamNoiseModel,
    cfg: &UncertaintyConfig,
    vibration_aware: bool,
) -> Result<()> {
    for p in &mut scan.points {
        let cov = if vibration_aware {
            let (sigma_r, sigma_t) = point_sigmas(intensity, p.dt, cfg);
            total_covariance(p, &sigma_r, &sigma_t, beam)?.total
        } else {
            let m = measurement_covariance(&p.raw, beam)?;
            let r = p.rot.matrix();
            r * m * r.transpose()
        };
        p.cov = cov;
    }
    Ok(())
}
