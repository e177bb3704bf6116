//! Scratch experiment driver: per scenario, compare the full method against
//! the UM+GM-disabled baseline over a few seeds.

use std::path::PathBuf;
use vlio_cli::{apply_setting, cmd_simulate, AblationSetting, ABLATION_GRID};
use vlio_core::config::{RunConfig, ScenarioConfig};
use vlio_core::io::{read_tum, Dataset};
use vlio_core::metrics::ape;
use vlio_core::pipeline::run_dataset;
use vlio_core::sim::end_time_error;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scenarios: Vec<String> = if args.len() > 1 {
        args[1..].to_vec()
    } else {
        vec!["vib_z_1hz".into(), "vib_pitch_2hz".into(), "vib_roll_3hz".into(), "vib_hybrid".into()]
    };
    let seeds: Vec<u64> = vec![0, 1, 2];
    let base = RunConfig::default();
    let full = &ABLATION_GRID[5];
    let baseline = &ABLATION_GRID[0];
    let wo_gm = &ABLATION_GRID[2];

    for scen_name in &scenarios {
        let path = PathBuf::from(format!("scenarios/{scen_name}.toml"));
        let scenario = ScenarioConfig::load(&path).unwrap();
        println!("=== {scen_name} ===");
        for setting in [baseline, wo_gm, full] {
            let mut ets = Vec::new();
            let mut ers = Vec::new();
            let mut apes = Vec::new();
            let mut times = Vec::new();
            for &seed in &seeds {
                let dir = PathBuf::from(format!("/tmp/tune/{scen_name}_{seed}"));
                if !dir.join("truth.tum").exists() {
                    cmd_simulate(&scenario, &dir, seed).unwrap();
                }
                let dataset = Dataset::load(&dir).unwrap();
                let cfg = apply_setting(&base, setting);
                let t0 = std::time::Instant::now();
                let result = run_dataset(&dataset, &cfg, true).unwrap();
                let dt = t0.elapsed().as_secs_f64();
                let truth = read_tum(&dir.join("truth.tum")).unwrap();
                let (et, er) = end_time_error(&result.trajectory, &truth, 2.0).unwrap();
                let a = ape(&result.trajectory, &truth).unwrap();
                ets.push(et);
                ers.push(er);
                apes.push(a.mean);
                times.push(dt / result.trajectory.len() as f64 * 1e3);
            }
            let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            println!(
                "{:<40} end_trans {:.4} m  end_rot {:.4} deg  mean_ape {:.4} m  ({:.1} ms/scan)",
                label(setting),
                mean(&ets),
                mean(&ers),
                mean(&apes),
                mean(&times),
            );
            print!("    per-seed et: ");
            for e in &ets {
                print!("{e:.4} ");
            }
            println!();
        }
    }
}

fn label(s: &AblationSetting) -> String {
    format!("{} (um={} gm={})", s.name, s.uncertainty, s.guided_matching)
}
