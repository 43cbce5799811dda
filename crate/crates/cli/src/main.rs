use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wframe::config::{parse_document, parse_override, RunConfig};
use wframe::{checks, harness, FrameError};

#[derive(Parser)]
#[command(name = "wframe", version, about = "Train, sample and check FRAME / wFRAME texture models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat TOML configuration document
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value override, applied after the document (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics, sample grids, checkpoint and summary
    Train(RunArgs),
    /// Run FRAME and wFRAME with shared seed and data
    Compare(RunArgs),
    /// Continue a checkpoint's chains without learning
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 9)]
        count: usize,
        #[arg(long, default_value_t = 100)]
        steps: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Response distance and mean energy of a checkpoint against a dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset configuration; defaults to the one recorded in the checkpoint
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the oracle suite and print a pass/fail report
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&PathBuf>, set: &[String], seed: Option<u64>, mode: Option<&str>) -> Result<RunConfig, FrameError> {
    let mut pairs = match path {
        Some(p) => parse_document(&std::fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    for s in set {
        pairs.push(parse_override(s)?);
    }
    if let Some(seed) = seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    if let Some(mode) = mode {
        pairs.push(("mode".into(), mode.to_string()));
    }
    RunConfig::resolve(&pairs)
}

fn run_config(args: &RunArgs) -> Result<RunConfig, FrameError> {
    load_config(args.config.as_ref(), &args.set, args.seed, args.mode.as_deref())
}

fn is_config_fault(err: &FrameError) -> bool {
    matches!(err, FrameError::Config(_) | FrameError::Json(_))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let cfg = run_config(&args)?;
            let s = harness::cmd_train(&cfg, &args.out)?;
            println!(
                "mode={} iterations={} diverged={} final_r={} final_energy={}",
                s.mode,
                s.iterations,
                s.diverged,
                fmt_opt(s.final_r),
                fmt_opt(s.final_energy)
            );
        }
        Command::Compare(args) => {
            let cfg = run_config(&args)?;
            let s = harness::cmd_compare(&cfg, &args.out)?;
            for r in [&s.frame, &s.wframe] {
                println!("mode={} diverged={} final_r={}", r.mode, r.diverged, fmt_opt(r.final_r));
            }
        }
        Command::Sample {
            checkpoint,
            count,
            steps,
            out,
        } => {
            let s = harness::cmd_sample(&checkpoint, count, steps, &out)?;
            println!("steps={} count={} diverged={}", s.steps, s.count, s.diverged);
        }
        Command::Eval {
            checkpoint,
            config,
            set,
            out,
        } => {
            let cfg = if config.is_some() || !set.is_empty() {
                Some(load_config(config.as_ref(), &set, None, None)?)
            } else {
                None
            };
            let s = harness::cmd_eval(&checkpoint, cfg.as_ref(), &out)?;
            println!("response_distance={} mean_energy={}", s.response_distance, s.mean_energy_samples);
        }
        Command::OracleCheck { seed } => {
            let lines = checks::run_all(seed)?;
            for l in &lines {
                println!("{l}");
            }
            if lines.iter().any(|l| !l.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "null".into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err.downcast_ref::<FrameError>() {
                Some(e) if is_config_fault(e) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
