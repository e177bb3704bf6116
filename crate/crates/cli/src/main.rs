use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use vlio_cli::{
    cmd_ablate, cmd_evaluate, cmd_run, cmd_simulate, load_run_config, load_scenario, CliError,
    EvalMode, RunOptions,
};

/// Vibration-aware LiDAR-inertial odometry: simulate datasets, run the
/// pipeline, evaluate trajectories, sweep ablations.
#[derive(Parser)]
#[command(name = "vlio", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalModeArg {
    Ape,
    EndTime,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scenario config into a dataset directory.
    Simulate {
        /// Scenario TOML file.
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the odometry pipeline over a dataset.
    Run {
        /// Run config TOML file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (from `simulate`).
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Single-threaded, bit-reproducible outputs (timing fields zeroed).
        #[arg(long)]
        deterministic: bool,
        /// Write per-scan covariance dumps under out/cov/.
        #[arg(long)]
        dump_covariances: bool,
    },
    /// Compare an estimated trajectory against ground truth.
    Evaluate {
        /// Estimated trajectory (TUM).
        #[arg(long)]
        estimate: PathBuf,
        /// Ground-truth trajectory (TUM).
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value = "ape")]
        mode: EvalModeArg,
        /// Settle window for end-time mode (s).
        #[arg(long, default_value_t = 2.0)]
        settle: f64,
        /// Optional CSV report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the UM/GM × deviation-mode ablation grid over seeds.
    Ablate {
        /// Scenario TOML files (repeatable).
        #[arg(long, required = true, num_args = 1..)]
        scenario: Vec<PathBuf>,
        /// Seeds (repeatable or comma-separated), at least 2.
        #[arg(long, required = true, value_delimiter = ',', num_args = 1..)]
        seeds: Vec<u64>,
        /// Base run config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Settle window for end-time errors (s).
        #[arg(long, default_value_t = 2.0)]
        settle: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let (_, scenario) = load_scenario(&config)?;
            let n = cmd_simulate(&scenario, &out, seed)?;
            println!("wrote {n} scans to {}", out.display());
            Ok(())
        }
        Command::Run {
            config,
            data,
            out,
            deterministic,
            dump_covariances,
        } => {
            let cfg = load_run_config(config.as_ref())?;
            let opts = RunOptions {
                deterministic,
                dump_covariances,
            };
            let result = cmd_run(&cfg, &data, &out, &opts)?;
            let skipped = result.diagnostics.iter().filter(|d| d.skipped).count();
            println!(
                "processed {} scans ({} skipped), map size {}, wrote {}",
                result.diagnostics.len(),
                skipped,
                result.map.len(),
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            estimate,
            truth,
            mode,
            settle,
            out,
        } => {
            let mode = match mode {
                EvalModeArg::Ape => EvalMode::Ape,
                EvalModeArg::EndTime => EvalMode::EndTime,
            };
            let report = cmd_evaluate(&estimate, &truth, mode, settle)?;
            print!("{}", report.text());
            if let Some(path) = out {
                std::fs::write(&path, report.csv()).map_err(CliError::from)?;
            }
            Ok(())
        }
        Command::Ablate {
            scenario,
            seeds,
            config,
            out,
            settle,
        } => {
            let mut scenarios = Vec::new();
            for p in &scenario {
                scenarios.push(load_scenario(p)?);
            }
            let cfg = load_run_config(config.as_ref())?;
            let cells = cmd_ablate(&scenarios, &seeds, &cfg, &out, settle)?;
            println!(
                "ran {} cells ({} scenarios x {} seeds x 6 settings), wrote {}",
                cells.len(),
                scenarios.len(),
                seeds.len(),
                out.join("ablation.csv").display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
