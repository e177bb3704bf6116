//! Per-scan odometry pipeline: propagate → undistort → intensity →
//! covariances → iterated update → map insert.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ikf::{ikf_update, IkfConfig};
use crate::io::{Dataset, ScanDiagnostics};
use crate::manifold::{RigidTransform, Vec3};
use crate::mapping::PointMap;
use crate::propagation::{
    build_pose_timeline, propagate_to, undistort, ImuWindow, NoiseParams,
};
use crate::scan::RawScan;
use crate::state::NavState;
use crate::trajectory::{TrajPose, Trajectory};
use crate::uncertainty::{
    assign_covariances, lidar_frame_velocities, vibration_intensity, BeamNoiseModel,
    UncertaintyConfig, VibrationIntensity,
};

/// The odometry engine, fed one scan at a time.
pub struct Odometry {
    ikf_cfg: IkfConfig,
    unc_cfg: UncertaintyConfig,
    beam: BeamNoiseModel,
    noise: NoiseParams,
    extrinsics: RigidTransform,
    downsample_stride: usize,
    uncertainty_enabled: bool,
    state: NavState,
    map: PointMap,
    scan_count: usize,
}

/// Outcome of one processed scan.
pub struct ScanOutcome {
    pub pose: TrajPose,
    pub diagnostics: ScanDiagnostics,
    /// The downsampled, undistorted scan with per-point covariances.
    pub undistorted: crate::scan::UndistortedScan,
}

impl Odometry {
    /// Builds the engine from a validated config plus the stationary IMU
    /// stretch used to fix gravity and the initial gyro bias. `t_start` is
    /// the timestamp of the first scan to be processed.
    pub fn initialize(cfg: &RunConfig, init_window: &ImuWindow, t_start: f64) -> Result<Odometry> {
        cfg.validate()?;
        if init_window.len() < 2 {
            return Err(Error::Format(
                "initialization needs at least 2 IMU samples".into(),
            ));
        }
        let n = init_window.len() as f64;
        let mean_accel = init_window.samples().iter().map(|s| s.accel).sum::<Vec3>() / n;
        let mean_gyro = init_window.samples().iter().map(|s| s.gyro).sum::<Vec3>() / n;
        // the stationary mean fixes the gravity direction; the magnitude is
        // a known constant
        let norm = mean_accel.norm();
        if !(8.0..=12.0).contains(&norm) {
            return Err(Error::Format(format!(
                "stationary accel mean has magnitude {norm}; data does not look stationary"
            )));
        }
        let gravity = if norm == cfg.gravity_magnitude {
            -mean_accel
        } else {
            -mean_accel * (cfg.gravity_magnitude / norm)
        };
        let mut state = NavState::initial(gravity, t_start);
        state.bias_gyro = mean_gyro;

        Ok(Odometry {
            ikf_cfg: cfg.ikf_config(),
            unc_cfg: cfg.uncertainty_config(),
            beam: cfg.beam_noise,
            noise: cfg.imu_noise,
            extrinsics: cfg.extrinsics.to_transform(),
            downsample_stride: cfg.downsample_stride,
            uncertainty_enabled: cfg.uncertainty_enabled,
            state,
            map: PointMap::new(cfg.map_resolution),
            scan_count: 0,
        })
    }

    pub fn state(&self) -> &NavState {
        &self.state
    }

    pub fn map(&self) -> &PointMap {
        &self.map
    }

    pub fn into_map(self) -> PointMap {
        self.map
    }

    /// World pose of the IMU body at the current state.
    pub fn body_pose(&self) -> RigidTransform {
        RigidTransform::new(self.state.rot, self.state.pos)
    }

    /// Processes one scan. `imu` must cover `[previous stamp, scan end]`.
    pub fn process_scan(&mut self, raw: &RawScan, imu: &ImuWindow) -> Result<ScanOutcome> {
        let scan_index = self.scan_count;
        self.scan_count += 1;
        let t0 = raw.t0;

        let scan = raw.downsample_stride(self.downsample_stride);
        let max_dt = scan
            .points
            .iter()
            .map(|p| p.dt)
            .fold(0.0f64, f64::max);
        let t_end = t0 + max_dt;

        // prior at scan start
        if t0 > self.state.stamp {
            let w = imu.slice_covering(self.state.stamp, t0);
            self.state = propagate_to(&self.state, &w, &self.noise, t0)?;
        }

        // intra-scan timeline and undistortion
        let scan_window = imu.slice_covering(t0, t_end);
        let timeline = build_pose_timeline(&self.state, &scan_window, t0, t_end)?;
        let timeline_lidar = timeline.to_lidar_frame(&self.extrinsics);
        let mut undistorted = undistort(&scan, &timeline_lidar)?;

        // per-scan vibration intensity from the full window
        let velocities = lidar_frame_velocities(&scan_window, &timeline, &self.extrinsics);
        let times: Vec<f64> = timeline.entries().iter().map(|e| e.t).collect();
        let intensity = if self.uncertainty_enabled {
            vibration_intensity(&velocities, &times, self.unc_cfg.deviation_mode)?
        } else {
            VibrationIntensity::zero()
        };
        assign_covariances(
            &mut undistorted,
            &intensity,
            &self.beam,
            &self.unc_cfg,
            self.uncertainty_enabled,
        )?;

        let mut skipped = false;
        let mut iterations = 0;
        let mut rematches = 0;
        let mut valid_matches = 0;
        let mut mean_weight = 0.0;

        if self.map.is_empty() {
            // the map is born from the first scan at the initial pose
            let pose_l = self.body_pose().compose(&self.extrinsics);
            self.map.insert_scan(&undistorted, &pose_l);
        } else {
            match ikf_update(&self.state, &undistorted, &self.map, &self.extrinsics, &self.ikf_cfg)
            {
                Ok((updated, stats)) => {
                    self.state = updated;
                    iterations = stats.iterations;
                    rematches = stats.rematches;
                    valid_matches = stats.valid_matches;
                    mean_weight = stats.mean_weight;
                }
                Err(Error::NoValidMatches { got, .. }) => {
                    skipped = true;
                    valid_matches = got;
                }
                Err(e) => return Err(e),
            }
            let pose_l = self.body_pose().compose(&self.extrinsics);
            self.map.insert_scan(&undistorted, &pose_l);
        }

        Ok(ScanOutcome {
            pose: TrajPose {
                t: t0,
                rot: self.state.rot,
                pos: self.state.pos,
            },
            diagnostics: ScanDiagnostics {
                scan: scan_index,
                t0,
                iterations,
                rematches,
                valid_matches,
                mean_weight,
                k_omega: intensity.k_omega.into(),
                k_v: intensity.k_v.into(),
                skipped,
                timing_ms: 0.0,
            },
            undistorted,
        })
    }
}

/// Full-dataset result.
pub struct RunResult {
    pub trajectory: Trajectory,
    pub diagnostics: Vec<ScanDiagnostics>,
    pub map: PointMap,
}

/// Runs the whole dataset: initializes from the stationary lead-in, then
/// processes every scan whose window the IMU stream covers. Per-scan wall
/// time is recorded unless `zero_timing` is set (bit-reproducible output
/// mode). `on_scan` sees every outcome as it is produced.
pub fn run_dataset_with(
    dataset: &Dataset,
    cfg: &RunConfig,
    zero_timing: bool,
    mut on_scan: impl FnMut(&ScanOutcome),
) -> Result<RunResult> {
    if dataset.scans.is_empty() {
        return Err(Error::Format("dataset has no scans".into()));
    }
    let imu = &dataset.imu;
    let imu_start = imu
        .first_time()
        .ok_or_else(|| Error::Format("dataset has no IMU samples".into()))?;
    let init_end = imu_start + cfg.init_stationary_secs;
    let init_window = imu.slice_covering(imu_start, init_end);

    let first = dataset
        .scans
        .iter()
        .position(|s| s.t0 >= init_end)
        .ok_or_else(|| Error::Format("no scan after the initialization window".into()))?;

    let mut odom = Odometry::initialize(cfg, &init_window, dataset.scans[first].t0)?;
    let mut trajectory = Trajectory::default();
    let mut diagnostics = Vec::new();

    for raw in &dataset.scans[first..] {
        let max_dt = raw.points.iter().map(|p| p.dt).fold(0.0f64, f64::max);
        if imu.last_time().unwrap_or(f64::NEG_INFINITY) < raw.t0 + max_dt {
            break; // IMU stream exhausted
        }
        let t_begin = std::time::Instant::now();
        let mut outcome = odom.process_scan(raw, imu)?;
        if !zero_timing {
            outcome.diagnostics.timing_ms = t_begin.elapsed().as_secs_f64() * 1e3;
        }
        on_scan(&outcome);
        trajectory.push(outcome.pose);
        diagnostics.push(outcome.diagnostics);
    }

    Ok(RunResult {
        trajectory,
        diagnostics,
        map: odom.into_map(),
    })
}

/// [`run_dataset_with`] without a per-scan sink.
pub fn run_dataset(dataset: &Dataset, cfg: &RunConfig, zero_timing: bool) -> Result<RunResult> {
    run_dataset_with(dataset, cfg, zero_timing, |_| {})
}
