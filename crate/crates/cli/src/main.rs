use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gprloc_cli::commands::{self, Precision};
use gprloc_cli::{CliError, CliResult, ExperimentConfig};
use gprloc_core::model::AblationAxis;

#[derive(Parser)]
#[command(name = "gprloc", version, about = "GPR-aided rover localization experiments")]
struct Cli {
    /// Experiment config (TOML with [filter], [model], [train], [ekf], [simulation] tables).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment, model and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory (meaning depends on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print errors as JSON on stderr.
    #[arg(long, global = true, value_enum, default_value_t = ErrorFormat::Text)]
    error_format: ErrorFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ErrorFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic sequence directories.
    Simulate {
        /// Number of sequences; more than one writes `<out>/seq_NNN`.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Condition a sequence's GPR stream and write the B-scan as CSV.
    Filter {
        #[arg(long)]
        seq: PathBuf,
    },
    /// Train GPRFormer; writes model.gprf and loss.csv into --out.
    Train {
        #[arg(long = "train", required = true, num_args = 1..)]
        train_dirs: Vec<PathBuf>,
        #[arg(long = "val", required = true, num_args = 1..)]
        val_dirs: Vec<PathBuf>,
    },
    /// Predict window displacements for a sequence.
    Infer {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Window stride in traces (default: the config's stride).
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
        precision: PrecisionArg,
        /// Also write the timing summary as JSON here.
        #[arg(long)]
        timing: Option<PathBuf>,
    },
    /// Run the EKF over a sequence and write the trajectory CSV.
    Fuse {
        #[arg(long)]
        seq: PathBuf,
        /// Window predictions from `infer`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Encoder + IMU only.
        #[arg(long)]
        no_gpr: bool,
    },
    /// Score predictions and trajectories against the sequence reference.
    Eval {
        #[arg(long)]
        seq: PathBuf,
        /// NAME=FILE prediction CSV (repeatable).
        #[arg(long = "predictions", value_parser = named_path)]
        predictions: Vec<(String, PathBuf)>,
        /// NAME=FILE trajectory CSV (repeatable).
        #[arg(long = "trajectory", value_parser = named_path)]
        trajectories: Vec<(String, PathBuf)>,
    },
    /// Retrain across values of one component on simulated data.
    Ablate {
        /// k, alpha, layers, dropout, pooling, encoder or filtering.
        #[arg(long)]
        axis: String,
        /// Comma-separated values (default: the axis's standard sweep).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
    },
}

fn named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => {
            let path = PathBuf::from(s);
            let name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).ok_or("expected NAME=FILE")?;
            Ok((name, path))
        }
    }
}

fn out_path(cli: &Cli) -> CliResult<PathBuf> {
    cli.out.clone().ok_or_else(|| CliError::Config("--out is required for this subcommand".into()))
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    }
    .with_seed(cli.seed);
    cfg.validate()?;
    let out = out_path(cli)?;
    match &cli.command {
        Command::Simulate { count } => {
            for d in commands::cmd_simulate(&cfg, &out, *count)? {
                println!("{}", d.display());
            }
        }
        Command::Filter { seq } => {
            let n = commands::cmd_filter(&cfg, seq, &out)?;
            println!("{n} conditioned traces -> {}", out.display());
        }
        Command::Train { train_dirs, val_dirs } => {
            let o = commands::cmd_train(&cfg, train_dirs, val_dirs, &out)?;
            let best = o.history[o.best_epoch];
            println!(
                "best epoch {}: train mse {:.3e}, val mse {:.3e}, alpha {:.3}",
                best.epoch, best.train_mse, best.val_mse, best.alpha
            );
        }
        Command::Infer { seq, checkpoint, stride, precision, timing } => {
            let p = match precision {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            };
            let o = commands::cmd_infer(&cfg, seq, checkpoint, stride.unwrap_or(cfg.stride), p, &out)?;
            let t = &o.timing;
            println!(
                "{} windows, mean forward pass {:.3} ms (max {:.3} ms, {})",
                t.windows, t.mean_forward_ms, t.max_forward_ms, t.precision
            );
            if let Some(path) = timing {
                let json = serde_json::to_string_pretty(t).expect("timing serializes");
                std::fs::write(path, json).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Fuse { seq, predictions, no_gpr } => {
            let track = commands::cmd_fuse(&cfg, seq, predictions.as_deref(), !no_gpr, &out)?;
            println!("{} poses -> {}", track.poses.len(), out.display());
        }
        Command::Eval { seq, predictions, trajectories } => {
            let report = commands::cmd_eval(&cfg, seq, predictions, trajectories, &out)?;
            print!("{}", report.summary());
        }
        Command::Ablate { axis, values } => {
            let axis: AblationAxis = axis.parse()?;
            for r in commands::cmd_ablate(&cfg, axis, values.clone(), &out)? {
                println!("{axis} = {:<10} RMSE {:>9.3} mm  alpha {:.3}", r.value, r.rmse_mm, r.alpha);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage errors share the input/config exit code.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.error_format == ErrorFormat::Json {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
