//! Scratch diagnostic: per-scan position error trace for one scenario/seed
//! under selected settings.

use std::path::PathBuf;
use vlio_cli::{apply_setting, cmd_simulate, ABLATION_GRID};
use vlio_core::config::{RunConfig, ScenarioConfig};
use vlio_core::io::{read_tum, Dataset};
use vlio_core::pipeline::run_dataset;

fn main() {
    let scen_name = std::env::args().nth(1).unwrap_or("vib_pitch_2hz".into());
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let scenario = ScenarioConfig::load(&PathBuf::from(format!("scenarios/{scen_name}.toml"))).unwrap();
    let dir = PathBuf::from(format!("/tmp/diag_trace/{scen_name}_{seed}"));
    if !dir.join("truth.tum").exists() {
        cmd_simulate(&scenario, &dir, seed).unwrap();
    }
    let dataset = Dataset::load(&dir).unwrap();
    let truth = read_tum(&dir.join("truth.tum")).unwrap();
    let base = RunConfig::default();

    let mut traces = Vec::new();
    for idx in [0usize, 2, 5] {
        let cfg = apply_setting(&base, &ABLATION_GRID[idx]);
        let result = run_dataset(&dataset, &cfg, true).unwrap();
        let errs: Vec<(f64, f64, usize, usize)> = result
            .trajectory
            .poses
            .iter()
            .zip(&result.diagnostics)
            .map(|(p, d)| {
                let gt = truth.nearest(p.t, 0.005).unwrap();
                ((p.t), (p.pos - gt.pos).norm(), d.valid_matches, d.iterations)
            })
            .collect();
        traces.push((ABLATION_GRID[idx].name, errs));
    }
    // print every 5th scan
    print!("{:>6}", "t");
    for (name, _) in &traces {
        print!("{:>12}", &name[..name.len().min(11)]);
    }
    println!("   (valid/iters of last)");
    let n = traces[0].1.len();
    for i in (0..n).step_by(5) {
        print!("{:>6.1}", traces[0].1[i].0);
        for (_, errs) in &traces {
            print!("{:>12.4}", errs[i].1);
        }
        let last = &traces[traces.len() - 1].1[i];
        println!("   {}/{}", last.2, last.3);
    }
}
