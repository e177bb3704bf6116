//! Scratch diagnostic: classify plane matches as same-surface or
//! cross-surface using simulator ground truth, with and without guided
//! matching.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use vlio_core::config::{RunConfig, ScenarioConfig};
use vlio_core::ikf::transform_point_and_cov;
use vlio_core::io::Dataset;
use vlio_core::manifold::Vec3;
use vlio_core::mapping::{fit_plane, reselect_mahalanobis};
use vlio_core::pipeline::Odometry;
use vlio_core::sim::render_scan;
use vlio_cli::cmd_simulate;

fn main() {
    let scen_name = std::env::args().nth(1).unwrap_or("vib_pitch_2hz".into());
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let path = PathBuf::from(format!("scenarios/{scen_name}.toml"));
    let scenario = ScenarioConfig::load(&path).unwrap();
    let dir = PathBuf::from(format!("/tmp/diag_gm/{scen_name}_{seed}"));
    if !dir.join("truth.tum").exists() {
        cmd_simulate(&scenario, &dir, seed).unwrap();
    }
    let dataset = Dataset::load(&dir).unwrap();
    let world = scenario.world.to_world().unwrap();
    let cfg = RunConfig::default();

    let init = dataset.imu.slice_covering(0.0, cfg.init_stationary_secs);
    let first = dataset
        .scans
        .iter()
        .position(|s| s.t0 >= cfg.init_stationary_secs)
        .unwrap();
    let mut odom = Odometry::initialize(&cfg, &init, dataset.scans[first].t0).unwrap();

    // run up to mid-vibration, then dissect one scan
    let target_t = 8.0;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for raw in &dataset.scans[first..] {
        if raw.t0 >= target_t {
            // dissect this scan at the current prior
            let outcome = odom.process_scan(raw, &dataset.imu).unwrap();
            let state = odom.state();
            let ext = scenario.rig.extrinsics();
            // ground-truth surfaces of the query points via true pose
            let (_, gt) = render_scan(&world, &scenario.profile, &scenario.rig, raw.t0, &mut rng).unwrap();
            let true_pose_l = scenario
                .profile
                .pose_at(raw.t0)
                .unwrap()
                .pose
                .compose(&ext);

            // the odometry's G frame is anchored at the initial IMU pose;
            // shift into the room frame for patch classification
            let g_origin = Vec3::from(scenario.profile.start_position);
            let surface_of = |w: &Vec3| -> usize {
                let mut best = (f64::INFINITY, 0);
                for (i, p) in world.patches.iter().enumerate() {
                    let d = p.plane_distance(w);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
                best.1
            };

            let ikf_cfg = cfg.ikf_config();
            let map = odom.map();
            let sensor = state.rot * ext.trans + state.pos;
            let mut stats = [[0usize; 2]; 2]; // [gm][wrong]
            let mut bias = [Vec3::zeros(), Vec3::zeros()];
            let mut printed = 0;
            for (j, p) in outcome.undistorted.points.iter().enumerate() {
                // true surface from the matching gt point (same beam order,
                // but undistorted scan was downsampled by stride 4)
                let gt_p = &gt.points[j * cfg.downsample_stride];
                let w_true = true_pose_l.apply(&gt_p.pos);
                let true_surf = surface_of(&w_true);

                let (pw, cw) = transform_point_and_cov(p, state, &ext);
                let Ok(cands) = map.knn_euclidean(&pw, ikf_cfg.k_candidates) else { continue };
                if cands.len() < ikf_cfg.k_neighbors {
                    continue;
                }
                for gm in [0usize, 1] {
                    let nb = if gm == 1 {
                        reselect_mahalanobis(&cands, &pw, &cw, ikf_cfg.k_neighbors).unwrap()
                    } else {
                        cands[..ikf_cfg.k_neighbors].to_vec()
                    };
                    let Ok(pm) = fit_plane(&nb, &sensor, ikf_cfg.plane_threshold) else { continue };
                    if !pm.valid {
                        continue;
                    }
                    // majority surface of the neighbors
                    let mut counts = std::collections::HashMap::new();
                    for n in &pm.neighbors {
                        *counts.entry(surface_of(&(n + g_origin))).or_insert(0usize) += 1;
                    }
                    let (&maj, &cnt) = counts.iter().max_by_key(|(_, &c)| c).unwrap();
                    let wrong = maj != true_surf || cnt < ikf_cfg.k_neighbors;
                    if gm == 0 && wrong && printed < 8 {
                        let nb_surfs: Vec<usize> =
                            pm.neighbors.iter().map(|n| surface_of(&(n + g_origin))).collect();
                        println!(
                            "  sample wrong: true_surf={true_surf} query_w=[{:.2} {:.2} {:.2}] p_world=[{:.2} {:.2} {:.2}] neighbors={:?} nb0=[{:.2} {:.2} {:.2}]",
                            w_true.x, w_true.y, w_true.z,
                            pw.x, pw.y, pw.z,
                            nb_surfs,
                            pm.neighbors[0].x, pm.neighbors[0].y, pm.neighbors[0].z
                        );
                        printed += 1;
                    }
                    stats[gm][wrong as usize] += 1;
                    let z = pm.normal.dot(&(pw - pm.centroid));
                    bias[gm] += pm.normal * z;
                }
            }
            for gm in [0, 1] {
                let total = stats[gm][0] + stats[gm][1];
                println!(
                    "gm={}: matches={} pure_right={} mixed_or_wrong={} ({:.1}%)  net_bias=[{:.4} {:.4} {:.4}]",
                    gm,
                    total,
                    stats[gm][0],
                    stats[gm][1],
                    100.0 * stats[gm][1] as f64 / total.max(1) as f64,
                    bias[gm].x / total.max(1) as f64 * 1000.0,
                    bias[gm].y / total.max(1) as f64 * 1000.0,
                    bias[gm].z / total.max(1) as f64 * 1000.0,
                );
            }
            println!(
                "prior pos err vs truth at t={:.1}: pose=[{:.3} {:.3} {:.3}]",
                raw.t0, state.pos.x, state.pos.y, state.pos.z
            );
            break;
        }
        odom.process_scan(raw, &dataset.imu).unwrap();
    }
}
