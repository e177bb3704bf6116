//! Scratch diagnostic: static noiseless run, print residual stats per scan.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vlio_core::config::RunConfig;
use vlio_core::ikf::{transform_point_and_cov, IkfConfig};
use vlio_core::io::Dataset;
use vlio_core::manifold::{RigidTransform, Vec3};
use vlio_core::mapping::{fit_plane, reselect_mahalanobis, PointMap};
use vlio_core::pipeline::Odometry;
use vlio_core::propagation::NoiseParams;
use vlio_core::sim::{
    render_scan, synthesize_imu, BaseMotion, Envelope, SensorRig, SimWorld, VibrationProfile,
};
use vlio_core::uncertainty::BeamNoiseModel;

fn main() {
    let world = SimWorld::room(6.0, 6.0, 3.0);
    let duration = 8.0;
    let profile = VibrationProfile {
        start_position: [3.0, 3.0, 1.5],
        base: BaseMotion::Static,
        envelope: Envelope {
            t_on: 3.0,
            t_off: duration - 3.0,
            ramp: 0.5,
        },
        duration,
        vib_translation: Default::default(),
        vib_rotation: Default::default(),
    };
    let mut rig = SensorRig::default();
    rig.imu_noise = NoiseParams {
        sigma_gyro: 0.0,
        sigma_accel: 0.0,
        sigma_bias_gyro_walk: 0.0,
        sigma_bias_accel_walk: 0.0,
    };
    rig.lidar.beam_noise = BeamNoiseModel {
        sigma_range: 0.0,
        sigma_bearing: 0.0,
    };

    let mut rng_imu = ChaCha8Rng::seed_from_u64(0);
    rng_imu.set_stream(1);
    let mut rng_beam = ChaCha8Rng::seed_from_u64(0);
    rng_beam.set_stream(2);
    let imu = synthesize_imu(&profile, &rig, 0.0, duration, &mut rng_imu).unwrap();
    let mut scans = Vec::new();
    for k in 0..((duration - rig.lidar.period) * 10.0) as usize {
        let t0 = k as f64 / 10.0;
        let (raw, _) = render_scan(&world, &profile, &rig, t0, &mut rng_beam).unwrap();
        scans.push(raw);
    }
    let dataset = Dataset {
        imu,
        scans,
        truth: None,
    };

    let cfg = RunConfig::default();
    let init = dataset.imu.slice_covering(0.0, 1.0);
    let mut odom = Odometry::initialize(&cfg, &init, 1.0).unwrap();

    // manual scan loop with residual inspection
    let ikf_cfg = IkfConfig::default();
    for raw in dataset.scans.iter().filter(|s| s.t0 >= 1.0).take(5) {
        let before = odom.state().pos;
        let outcome = odom.process_scan(raw, &dataset.imu).unwrap();
        let after = odom.state().pos;

        // residual histogram against the map at the post-update state
        let map: &PointMap = odom.map();
        let state = odom.state();
        let ext = RigidTransform::identity();
        let mut n_valid = 0;
        let mut n_invalid = 0;
        let mut sum_abs = 0.0;
        let mut max_abs: f64 = 0.0;
        let mut big = 0;
        let mut pull = Vec3::zeros(); // Σ u z / σ² direction of the net force
        let sensor = state.rot * ext.trans + state.pos;
        for p in &outcome.undistorted.points {
            let (pw, cw) = transform_point_and_cov(p, state, &ext);
            let Ok(cands) = map.knn_euclidean(&pw, ikf_cfg.k_candidates) else {
                continue;
            };
            if cands.len() < ikf_cfg.k_neighbors {
                continue;
            }
            let nb = reselect_mahalanobis(&cands, &pw, &cw, ikf_cfg.k_neighbors).unwrap();
            match fit_plane(&nb, &sensor, ikf_cfg.plane_threshold) {
                Ok(pm) if pm.valid => {
                    let z = pm.normal.dot(&(pw - pm.centroid));
                    let r_j = (pm.normal.transpose() * cw * pm.normal)[(0, 0)] + 1e-8;
                    let gate = (3.0 * r_j.sqrt()).min(vlio_core::ikf::residual_gate(p.pos.norm()));
                    if z.abs() > gate {
                        n_invalid += 1;
                        continue;
                    }
                    n_valid += 1;
                    sum_abs += z.abs();
                    max_abs = max_abs.max(z.abs());
                    if z.abs() > 0.02 {
                        big += 1;
                    }
                    pull += pm.normal * (z / r_j);
                }
                _ => n_invalid += 1,
            }
        }
        println!(
            "scan t0={:.1}: pos [{:.2e} {:.2e} {:.2e}] iters={} valid={} rej={} mean|z|={:.4} max|z|={:.4} big={} pull=[{:.1e} {:.1e} {:.1e}]",
            raw.t0,
            after.x, after.y, after.z,
            outcome.diagnostics.iterations,
            n_valid,
            n_invalid,
            sum_abs / n_valid.max(1) as f64,
            max_abs,
            big,
            pull.x, pull.y, pull.z
        );
        let _ = before;
    }
    println!("map size: {}", odom.map().len());
}
