//! Command-line driver: data generation, training, evaluation and NFE sweeps.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use meanflow_core::{LambdaSource, VelocityModel};

pub use commands::{cmd_eval, cmd_gen_data, cmd_nfe_sweep, cmd_train, cmd_train_mr, EvalOptions};
pub use config::{reference_page, ExperimentConfig};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "meanflow", version, about = "One-step mean-flow target source extraction")]
struct Cli {
    /// Experiment configuration (TOML, flat dotted keys); defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    /// Velocity checkpoint (network or oracle stub).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Mixing ratio source: oracle, predicted or fixed:<value>.
    #[arg(long)]
    lambda: Option<String>,
    /// Predictor checkpoint for --lambda predicted.
    #[arg(long)]
    mr: Option<PathBuf>,
    /// Split to evaluate (train, val, test).
    #[arg(long)]
    split: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/val/test splits.
    GenData {
        /// Output directory (default: data.dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the velocity network.
    Train,
    /// Train the mixing-ratio predictor.
    TrainMr,
    /// Evaluate a checkpoint and write extracted waveforms.
    Eval {
        #[command(flatten)]
        args: EvalArgs,
        /// Function evaluations.
        #[arg(long)]
        nfe: Option<usize>,
    },
    /// Evaluate a checkpoint at several function-evaluation counts.
    NfeSweep {
        #[command(flatten)]
        args: EvalArgs,
        /// Comma-separated counts, e.g. 1,2,4,8,16.
        #[arg(long)]
        nfe_list: Option<String>,
    },
    /// Write the ground-truth-velocity stub checkpoint.
    OracleCheckpoint {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the configuration key reference (markdown).
    ConfigReference {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every key with its effective value.
    ShowConfig,
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn eval_options(args: &EvalArgs, nfe: Option<usize>) -> Result<EvalOptions> {
    let lambda = args
        .lambda
        .as_deref()
        .map(|s| s.parse::<LambdaSource>().map_err(|e| CliError::Usage(e.to_string())))
        .transpose()?;
    Ok(EvalOptions {
        nfe,
        lambda,
        mr: args.mr.clone(),
        split: args.split.clone(),
        out: args.out.clone(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| {
        CliError::Core(meanflow_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::GenData { out } => {
            let cfg = load_config(cfg_path)?;
            for dir in cmd_gen_data(&cfg, out.as_deref())? {
                println!("wrote {}", dir.display());
            }
        }
        Command::Train => {
            let cfg = load_config(cfg_path)?;
            let s = cmd_train(&cfg)?;
            if let Some(k) = s.resumed_from_step {
                println!("resumed from step {k}");
            }
            println!(
                "best validation SI-SDR: {:.3} dB (epoch {}); {} steps; final loss {:.6e}; checkpoint {}",
                s.best_val_si_sdr,
                s.best_epoch,
                s.steps,
                s.final_loss,
                s.best_checkpoint.display()
            );
        }
        Command::TrainMr => {
            let cfg = load_config(cfg_path)?;
            let (_, r) = cmd_train_mr(&cfg)?;
            let last = r.last();
            println!(
                "held-out MSE {:.6e} MAE {:.6e}; constant-0.5 MSE {:.6e}; lambda variance {:.6e}",
                last.val_mse, last.val_mae, r.baseline_mse, r.lambda_variance
            );
            if r.flagged {
                eprintln!("warning: held-out MSE did not decrease at every one of the first five epochs");
            }
        }
        Command::Eval { args, nfe } => {
            let cfg = load_config(cfg_path)?;
            let report = cmd_eval(&cfg, &args.checkpoint, &eval_options(&args, nfe)?)?;
            let csv = report.to_csv();
            println!("{}", csv.lines().last().unwrap_or_default());
            if report.aggregate.failures > 0 {
                eprintln!("warning: {} examples failed", report.aggregate.failures);
            }
        }
        Command::NfeSweep { args, nfe_list } => {
            let cfg = load_config(cfg_path)?;
            let list = nfe_list.as_deref().map(commands::parse_nfe_list).transpose()?;
            let reports = cmd_nfe_sweep(&cfg, &args.checkpoint, list.as_deref(), &eval_options(&args, None)?)?;
            println!("nfe,mean_si_sdr,mean_si_sdri");
            for (nfe, r) in reports {
                println!("{nfe},{:.4},{:.4}", r.aggregate.mean_si_sdr, r.aggregate.mean_improvement);
            }
        }
        Command::OracleCheckpoint { out } => {
            VelocityModel::Oracle.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::ConfigReference { out } => {
            let page = reference_page();
            match out {
                Some(p) => write_text(&p, &page)?,
                None => print!("{page}"),
            }
        }
        Command::ShowConfig => {
            print!("{}", load_config(cfg_path)?.to_toml_string());
        }
    }
    Ok(())
}

/// Run the command line; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
