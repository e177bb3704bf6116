//! Command implementations behind the `vlio` binary: dataset simulation,
//! odometry runs, trajectory evaluation and the ablation grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use vlio_core::config::{RunConfig, ScenarioConfig};
use vlio_core::io::{
    self, write_covariance_csv, write_diagnostics_jsonl, write_imu_csv, write_scan_bin,
    write_scan_index, write_tum, Dataset,
};
use vlio_core::metrics::{ape, ApeReport};
use vlio_core::pipeline::{run_dataset_with, RunResult};
use vlio_core::sim::{end_time_error, render_scan, synthesize_imu};
use vlio_core::uncertainty::DeviationMode;
use vlio_core::Error as CoreError;

/// Command-level error, split by exit code: config errors exit 1, data
/// errors exit 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

/// Renders a scenario into a dataset directory: `imu.csv`,
/// `scans/NNNNNN.bin`, `truth.tum`, `scan_index.csv`. Byte-identical per
/// (scenario, seed).
pub fn cmd_simulate(scenario: &ScenarioConfig, out_dir: &Path, seed: u64) -> CliResult<usize> {
    scenario.validate()?;
    let world = scenario.world.to_world()?;
    let profile = &scenario.profile;
    let rig = &scenario.rig;

    fs::create_dir_all(out_dir.join("scans"))?;

    // independent streams for the IMU and beam noise
    let mut rng_imu = ChaCha8Rng::seed_from_u64(seed);
    rng_imu.set_stream(1);
    let mut rng_beam = ChaCha8Rng::seed_from_u64(seed);
    rng_beam.set_stream(2);

    let imu = synthesize_imu(profile, rig, 0.0, profile.duration, &mut rng_imu)?;
    write_imu_csv(&out_dir.join("imu.csv"), &imu)?;

    let period = rig.lidar.period;
    let mut index = Vec::new();
    let mut scan_times = Vec::new();
    let mut k = 0usize;
    loop {
        let t0 = k as f64 / scenario.scan_rate;
        if t0 + period > profile.duration {
            break;
        }
        let (raw, _gt) = render_scan(&world, profile, rig, t0, &mut rng_beam)?;
        let file = io::scan_file_name(k);
        write_scan_bin(&out_dir.join(&file), &raw)?;
        index.push((k, t0, file.to_string_lossy().into_owned()));
        scan_times.push(t0);
        k += 1;
    }
    if index.is_empty() {
        return Err(CliError::Config(
            "scenario too short to contain a single scan".into(),
        ));
    }
    write_scan_index(&out_dir.join("scan_index.csv"), &index)?;

    let truth = profile.truth_trajectory(&scan_times)?;
    write_tum(&out_dir.join("truth.tum"), &truth)?;
    Ok(index.len())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

pub struct RunOptions {
    /// Force bit-reproducible output (zeroes wall-clock fields).
    pub deterministic: bool,
    /// Write per-scan covariance CSV dumps under `out/cov/`.
    pub dump_covariances: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            deterministic: false,
            dump_covariances: false,
        }
    }
}

/// Runs the full pipeline over a dataset directory, writing `estimate.tum`,
/// `diagnostics.jsonl`, `map.txt` and the effective `run_config.toml`.
pub fn cmd_run(
    cfg: &RunConfig,
    dataset_dir: &Path,
    out_dir: &Path,
    opts: &RunOptions,
) -> CliResult<RunResult> {
    cfg.validate()?;
    let dataset = Dataset::load(dataset_dir)?;
    fs::create_dir_all(out_dir)?;
    if opts.dump_covariances {
        fs::create_dir_all(out_dir.join("cov"))?;
    }

    let result = run_dataset_with(&dataset, cfg, opts.deterministic, |outcome| {
        if opts.dump_covariances {
            let path = out_dir.join(format!("cov/{:06}.csv", outcome.diagnostics.scan));
            if let Err(e) = write_covariance_csv(&path, &outcome.undistorted) {
                log::warn!("covariance dump failed: {e}");
            }
        }
    })?;

    let (map_out, traj_out) = (out_dir.join("map.txt"), out_dir.join("estimate.tum"));
    write_tum(&traj_out, &result.trajectory)?;
    write_diagnostics_jsonl(&out_dir.join("diagnostics.jsonl"), &result.diagnostics)?;
    let map_file = fs::File::create(map_out)?;
    result.map.write_ascii(std::io::BufWriter::new(map_file))?;
    cfg.save(&out_dir.join("run_config.toml"))?;
    Ok(result)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Ape,
    EndTime,
}

/// Metrics of one estimate-vs-truth comparison.
#[derive(Clone, Copy, Debug)]
pub struct EvalReport {
    pub ape: Option<ApeReport>,
    /// (translation m, rotation deg), end-time mode.
    pub end_time: Option<(f64, f64)>,
}

impl EvalReport {
    pub fn text(&self) -> String {
        let mut s = String::new();
        if let Some(a) = &self.ape {
            let _ = writeln!(s, "pairs:        {}", a.pairs);
            let _ = writeln!(s, "mean APE:     {:.6} m", a.mean);
            let _ = writeln!(s, "RMSE APE:     {:.6} m", a.rmse);
            let _ = writeln!(s, "mean rot APE: {:.6} deg", a.mean_rot_deg);
        }
        if let Some((t, r)) = &self.end_time {
            let _ = writeln!(s, "end-time translation error: {:.6} m", t);
            let _ = writeln!(s, "end-time rotation error:    {:.6} deg", r);
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        if let Some(a) = &self.ape {
            let _ = writeln!(s, "pairs,{}", a.pairs);
            let _ = writeln!(s, "mean_ape_m,{:.9}", a.mean);
            let _ = writeln!(s, "rmse_ape_m,{:.9}", a.rmse);
            let _ = writeln!(s, "mean_rot_ape_deg,{:.9}", a.mean_rot_deg);
        }
        if let Some((t, r)) = &self.end_time {
            let _ = writeln!(s, "end_time_translation_m,{:.9}", t);
            let _ = writeln!(s, "end_time_rotation_deg,{:.9}", r);
        }
        s
    }
}

/// Compares two TUM trajectories.
pub fn cmd_evaluate(
    estimate_path: &Path,
    truth_path: &Path,
    mode: EvalMode,
    settle_window: f64,
) -> CliResult<EvalReport> {
    let est = io::read_tum(estimate_path)?;
    let tru = io::read_tum(truth_path)?;
    match mode {
        EvalMode::Ape => Ok(EvalReport {
            ape: Some(ape(&est, &tru)?),
            end_time: None,
        }),
        EvalMode::EndTime => Ok(EvalReport {
            ape: None,
            end_time: Some(end_time_error(&est, &tru, settle_window)?),
        }),
    }
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// One cell of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationSetting {
    pub name: &'static str,
    pub uncertainty: bool,
    pub guided_matching: bool,
    pub mode: DeviationMode,
}

/// The six settings: the 2×2 UM/GM grid (MAD) plus the LLS and STD
/// intensity variants of the full method.
pub const ABLATION_GRID: [AblationSetting; 6] = [
    AblationSetting {
        name: "wo_uncertainty_and_guided_matching",
        uncertainty: false,
        guided_matching: false,
        mode: DeviationMode::Mad,
    },
    AblationSetting {
        name: "wo_uncertainty",
        uncertainty: false,
        guided_matching: true,
        mode: DeviationMode::Mad,
    },
    AblationSetting {
        name: "wo_guided_matching",
        uncertainty: true,
        guided_matching: false,
        mode: DeviationMode::Mad,
    },
    AblationSetting {
        name: "vib_estimation_lls",
        uncertainty: true,
        guided_matching: true,
        mode: DeviationMode::Lls,
    },
    AblationSetting {
        name: "vib_estimation_std",
        uncertainty: true,
        guided_matching: true,
        mode: DeviationMode::Std,
    },
    AblationSetting {
        name: "proposed",
        uncertainty: true,
        guided_matching: true,
        mode: DeviationMode::Mad,
    },
];

/// Applies a grid cell to a base run config.
pub fn apply_setting(base: &RunConfig, setting: &AblationSetting) -> RunConfig {
    let mut cfg = base.clone();
    cfg.uncertainty_enabled = setting.uncertainty;
    cfg.guided_matching_enabled = setting.guided_matching;
    cfg.deviation_mode = setting.mode;
    cfg
}

/// Metrics of a single (scenario, seed, setting) run.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub scenario: String,
    pub setting: &'static str,
    pub seed: u64,
    pub mean_ape: f64,
    pub rmse_ape: f64,
    pub end_trans: f64,
    pub end_rot_deg: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs the ablation grid: every scenario × seed is simulated once and then
/// processed under each of the six settings. Emits `ablation.csv` (mean ±
/// std per setting, mirroring the 6-row table) and `ablation_cells.csv`
/// (raw per-seed cells). Needs at least 2 seeds.
pub fn cmd_ablate(
    scenarios: &[(String, ScenarioConfig)],
    seeds: &[u64],
    base_cfg: &RunConfig,
    out_dir: &Path,
    settle_window: f64,
) -> CliResult<Vec<AblationCell>> {
    if seeds.len() < 2 {
        return Err(CliError::Config("ablate needs at least 2 seeds".into()));
    }
    if scenarios.is_empty() {
        return Err(CliError::Config("ablate needs at least one scenario".into()));
    }
    base_cfg.validate()?;
    fs::create_dir_all(out_dir)?;

    let mut cells: Vec<AblationCell> = Vec::new();
    for (scen_name, scenario) in scenarios {
        for &seed in seeds {
            let data_dir = out_dir.join(format!("datasets/{scen_name}_s{seed}"));
            cmd_simulate(scenario, &data_dir, seed)?;
            let truth = io::read_tum(&data_dir.join("truth.tum"))?;

            // settings are independent given the dataset; fan out
            let results: Vec<CliResult<(RunResult, &'static str)>> = std::thread::scope(|s| {
                let handles: Vec<_> = ABLATION_GRID
                    .iter()
                    .map(|setting| {
                        let cfg = apply_setting(base_cfg, setting);
                        let data_dir = data_dir.clone();
                        s.spawn(move || {
                            let dataset = Dataset::load(&data_dir)?;
                            let result = run_dataset_with(&dataset, &cfg, true, |_| {})?;
                            Ok((result, setting.name))
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("ablation worker panicked"))
                    .collect()
            });

            for res in results {
                let (result, name) = res?;
                let ape_rep = ape(&result.trajectory, &truth)?;
                let (et, er) = end_time_error(&result.trajectory, &truth, settle_window)?;
                cells.push(AblationCell {
                    scenario: scen_name.clone(),
                    setting: name,
                    seed,
                    mean_ape: ape_rep.mean,
                    rmse_ape: ape_rep.rmse,
                    end_trans: et,
                    end_rot_deg: er,
                });
            }
        }
    }

    // raw cells
    let mut raw = String::from("scenario,setting,seed,mean_ape_m,rmse_ape_m,end_trans_m,end_rot_deg\n");
    for c in &cells {
        let _ = writeln!(
            raw,
            "{},{},{},{:.9},{:.9},{:.9},{:.9}",
            c.scenario, c.setting, c.seed, c.mean_ape, c.rmse_ape, c.end_trans, c.end_rot_deg
        );
    }
    fs::write(out_dir.join("ablation_cells.csv"), raw)?;

    // aggregated table, one row per (scenario, setting)
    let mut table = String::from(
        "scenario,setting,um,gm,mode,mean_ape_mean,mean_ape_std,end_trans_mean,end_trans_std,end_rot_mean,end_rot_std\n",
    );
    for (scen_name, _) in scenarios {
        for setting in &ABLATION_GRID {
            let sel: Vec<&AblationCell> = cells
                .iter()
                .filter(|c| &c.scenario == scen_name && c.setting == setting.name)
                .collect();
            let apes: Vec<f64> = sel.iter().map(|c| c.mean_ape).collect();
            let ets: Vec<f64> = sel.iter().map(|c| c.end_trans).collect();
            let ers: Vec<f64> = sel.iter().map(|c| c.end_rot_deg).collect();
            let (am, astd) = mean_std(&apes);
            let (tm, tstd) = mean_std(&ets);
            let (rm, rstd) = mean_std(&ers);
            let _ = writeln!(
                table,
                "{},{},{},{},{:?},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                scen_name,
                setting.name,
                setting.uncertainty as u8,
                setting.guided_matching as u8,
                setting.mode,
                am,
                astd,
                tm,
                tstd,
                rm,
                rstd
            );
        }
    }
    fs::write(out_dir.join("ablation.csv"), table)?;
    Ok(cells)
}

/// Loads and validates a scenario file, returning its stem as the name.
pub fn load_scenario(path: &Path) -> CliResult<(String, ScenarioConfig)> {
    let cfg = ScenarioConfig::load(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    Ok((name, cfg))
}

/// Loads a run config, or defaults when no path is given.
pub fn load_run_config(path: Option<&PathBuf>) -> CliResult<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}
