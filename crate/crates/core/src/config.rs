//! Run and scenario configuration, TOML-backed with strict validation.
//!
//! Unknown keys are rejected at parse time; value ranges are checked by
//! `validate()` before anything runs.

use crate::error::{Error, Result};
use crate::ikf::IkfConfig;
use crate::manifold::{RigidTransform, Rot3, Vec3};
use crate::propagation::NoiseParams;
use crate::sim::{SensorRig, SimWorld, VibrationProfile};
use crate::uncertainty::{BeamNoiseModel, DeviationMode, UncertaintyConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Extrinsics as a rotation vector plus translation, the config-file form.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExtrinsicsConfig {
    pub rotvec: [f64; 3],
    pub translation: [f64; 3],
}

impl Default for ExtrinsicsConfig {
    fn default() -> Self {
        ExtrinsicsConfig {
            rotvec: [0.0; 3],
            translation: [0.0; 3],
        }
    }
}

impl ExtrinsicsConfig {
    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::new(Rot3::exp(&Vec3::from(self.rotvec)), Vec3::from(self.translation))
    }
}

/// All odometry tunables, with the defaults used throughout testing.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Uncertainty scale γ.
    pub gamma: f64,
    /// Plane-fit neighbor count K.
    pub k_neighbors: usize,
    /// Euclidean candidate count K_c; `None` means 2·K.
    pub k_candidates: Option<usize>,
    /// Map voxel resolution (m).
    pub map_resolution: f64,
    /// Max iKF iterations per scan.
    pub max_iterations: usize,
    /// Keep every n-th point of a scan, in firing order.
    pub downsample_stride: usize,
    /// Vibration-intensity statistic.
    pub deviation_mode: DeviationMode,
    /// Post-undistortion uncertainty modeling on/off (the UM ablation).
    pub uncertainty_enabled: bool,
    /// Mahalanobis-guided matching on/off (the GM ablation).
    pub guided_matching_enabled: bool,
    /// Point-plane distance bound for valid planes (m).
    pub plane_threshold: f64,
    /// iKF convergence threshold, rotation (rad).
    pub eps_rot: f64,
    /// iKF convergence threshold, position (m).
    pub eps_pos: f64,
    /// Stationary time used to initialize gravity and gyro bias (s).
    pub init_stationary_secs: f64,
    /// Known gravity magnitude; the stationary accel mean fixes only the
    /// direction (m/s²).
    pub gravity_magnitude: f64,
    pub beam_noise: BeamNoiseModel,
    pub imu_noise: NoiseParams,
    pub extrinsics: ExtrinsicsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gamma: 0.1,
            k_neighbors: 5,
            k_candidates: None,
            map_resolution: 0.5,
            max_iterations: 4,
            downsample_stride: 4,
            deviation_mode: DeviationMode::Mad,
            uncertainty_enabled: true,
            guided_matching_enabled: true,
            plane_threshold: 0.1,
            eps_rot: 1e-3,
            eps_pos: 1e-3,
            init_stationary_secs: 1.0,
            gravity_magnitude: 9.81,
            beam_noise: BeamNoiseModel::default(),
            imu_noise: NoiseParams::default(),
            extrinsics: ExtrinsicsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn k_candidates_effective(&self) -> usize {
        self.k_candidates.unwrap_or(2 * self.k_neighbors)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config("gamma must be > 0".into()));
        }
        if self.k_neighbors < 3 {
            return Err(Error::Config("k_neighbors must be >= 3".into()));
        }
        if self.k_candidates_effective() < self.k_neighbors {
            return Err(Error::Config("k_candidates must be >= k_neighbors".into()));
        }
        if !(self.map_resolution > 0.0) {
            return Err(Error::Config("map_resolution must be > 0".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if self.downsample_stride < 1 {
            return Err(Error::Config("downsample_stride must be >= 1".into()));
        }
        if !(self.plane_threshold > 0.0) {
            return Err(Error::Config("plane_threshold must be > 0".into()));
        }
        if !(self.eps_rot > 0.0 && self.eps_pos > 0.0) {
            return Err(Error::Config("eps_rot and eps_pos must be > 0".into()));
        }
        if self.init_stationary_secs < 0.0 {
            return Err(Error::Config("init_stationary_secs must be >= 0".into()));
        }
        if !(9.5..=10.1).contains(&self.gravity_magnitude) {
            return Err(Error::Config(
                "gravity_magnitude must be within [9.5, 10.1]".into(),
            ));
        }
        self.beam_noise.validate()?;
        self.imu_noise.validate()?;
        Ok(())
    }

    pub fn ikf_config(&self) -> IkfConfig {
        IkfConfig {
            max_iterations: self.max_iterations,
            eps_rot: self.eps_rot,
            eps_pos: self.eps_pos,
            k_neighbors: self.k_neighbors,
            k_candidates: self.k_candidates_effective(),
            plane_threshold: self.plane_threshold,
            guided_matching: self.guided_matching_enabled,
        }
    }

    pub fn uncertainty_config(&self) -> UncertaintyConfig {
        UncertaintyConfig {
            gamma: self.gamma,
            deviation_mode: self.deviation_mode,
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// World geometry in config form: a room shorthand and/or explicit patches.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Axis-aligned room `[w, d, h]` starting at the origin.
    pub room: Option<[f64; 3]>,
    pub patches: Vec<crate::sim::Patch>,
}

impl WorldConfig {
    pub fn to_world(&self) -> Result<SimWorld> {
        let mut world = match self.room {
            Some([w, d, h]) => SimWorld::room(w, d, h),
            None => SimWorld { patches: vec![] },
        };
        world.patches.extend(self.patches.iter().cloned());
        if world.patches.is_empty() {
            return Err(Error::Config("world has no geometry".into()));
        }
        world.validate()?;
        Ok(world)
    }
}

/// A full simulation scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Scan rate (Hz); scans start at `k / scan_rate`.
    pub scan_rate: f64,
    pub world: WorldConfig,
    pub profile: VibrationProfile,
    pub rig: SensorRig,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scan_rate > 0.0) {
            return Err(Error::Config("scan_rate must be > 0".into()));
        }
        self.world.to_world()?;
        self.profile.validate()?;
        self.rig.validate()?;
        if self.rig.imu_rate < 10.0 * self.scan_rate {
            return Err(Error::Config(
                "rig.imu_rate must be at least 10x scan_rate".into(),
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: ScenarioConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
