use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chiller_bench::commands;
use chiller_bench::pipeline::Variant;
use chiller_core::config::AppConfig;
use chiller_core::error::CoreError;

/// Chiller-plant energy management benchmark.
#[derive(Parser)]
#[command(name = "chiller-bench", version, about)]
struct Cli {
    /// Configuration file; omit to use the built-in benchmark defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the master seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Force single-threaded evaluation.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the default configuration, synthetic traces and curve samples.
    GenData {
        /// Gaussian noise added to the generated power-curve samples, kW.
        #[arg(long, default_value_t = 0.0)]
        sample_noise_kw: f64,
    },
    /// Fit cubic power curves from per-chiller sample files.
    FitCurves {
        /// Directory holding chiller_<id>.csv sample files.
        #[arg(long)]
        samples: PathBuf,
    },
    /// Train a policy (receding_horizon or one_step).
    Train {
        #[arg(long, default_value = "receding_horizon")]
        variant: String,
        /// Resume from the saved training state in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate one controller on the benchmark trace.
    Eval {
        /// rule_based | one_step | receding_horizon | oracle
        #[arg(long)]
        controller: String,
        /// Directory holding checkpoints (defaults to --out).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Run all controllers on the identical trace and emit the report.
    Compare {
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Per-step optimal dispatch over the benchmark trace or a file.
    Oracle {
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Fit and score the forecasting baselines.
    Forecast,
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Numeric(_)) | Some(CoreError::Fit(_)) => 3,
        Some(_) => 2,
        None => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.deterministic {
        // Serial evaluation keeps even the oracle's reduction order fixed;
        // results are identical either way, this just removes thread
        // scheduling from the picture entirely.
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .ok();
    }

    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::benchmark_default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.ppo.seed = seed;
    }
    cfg.validate()?;

    let out = &cli.out;
    match cli.command {
        Command::GenData { sample_noise_kw } => {
            commands::cmd_gen_data(&cfg, out, sample_noise_kw)?
        }
        Command::FitCurves { samples } => commands::cmd_fit_curves(&cfg, &samples, out)?,
        Command::Train { variant, resume } => {
            let variant = Variant::parse(&variant).ok_or_else(|| {
                CoreError::config(format!(
                    "unknown variant '{variant}' (expected receding_horizon or one_step)"
                ))
            })?;
            let artifacts = commands::cmd_train(&cfg, out, variant, resume)?;
            if artifacts.diverged {
                return Err(CoreError::numeric("training diverged").into());
            }
        }
        Command::Eval {
            controller,
            checkpoints,
        } => {
            let ckpt_dir = checkpoints.unwrap_or_else(|| out.clone());
            commands::cmd_eval(&cfg, out, &controller, &ckpt_dir)?
        }
        Command::Compare { checkpoints } => {
            let ckpt_dir = checkpoints.unwrap_or_else(|| out.clone());
            commands::cmd_compare(&cfg, out, &ckpt_dir)?;
        }
        Command::Oracle { trace } => commands::cmd_oracle(&cfg, out, trace.as_deref())?,
        Command::Forecast => commands::cmd_forecast(&cfg, out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
