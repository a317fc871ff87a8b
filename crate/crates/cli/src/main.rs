use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safe_explore_cli::config::{ExperimentConfig, Method};
use safe_explore_cli::sweep::{run_sweep, SweepContext};
use safe_explore_cli::{commands, report};

#[derive(Parser)]
#[command(
    name = "safe-explore",
    version,
    about = "Safe off-policy learning with novel actions"
)]
struct Cli {
    /// Run seed for single-step commands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output path (directory or file, depending on the command).
    #[arg(long, global = true, env = "SAFE_EXPLORE_OUT")]
    out: Option<PathBuf>,
    /// Recompute sweep cells that are already complete.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true, env = "SAFE_EXPLORE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON experiment config; omitted fields take the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the full-scale profile instead of the desk profile.
    #[arg(long)]
    paper_scale: bool,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let cfg = match (&self.config, self.paper_scale) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, true) => ExperimentConfig::paper_scale(),
            (None, false) => ExperimentConfig::desk(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic environment and save it.
    GenEnv {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Log data from the softmax logging policy.
    GenData {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long)]
        n: usize,
        /// Also assign S1/S2 folds with this S1 fraction.
        #[arg(long)]
        split: Option<f64>,
    },
    /// Train one policy on a logged dataset.
    Train {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Method,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run K staged deployments starting from a logged dataset.
    Depsue {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a saved policy against the true reward function.
    Evaluate {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long, allow_hyphen_values = true)]
        threshold: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the full β × method × seed sweep.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Summarize a sweep's metrics into tables.
    Report {
        /// Results directory (defaults to --out, then `results`).
        dir: Option<PathBuf>,
    },
}

fn out_or(cli_out: &Option<PathBuf>, default: &str) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from(default))
}

enum Failure {
    Config(anyhow::Error),
    Other(anyhow::Error),
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    let other = Failure::Other;
    match cli.command {
        Command::GenEnv { cfg } => {
            let cfg = cfg.load().map_err(Failure::Config)?;
            commands::gen_env(&cfg, &out_or(&cli.out, "env")).map_err(other)?;
        }
        Command::GenData {
            env,
            beta,
            n,
            split,
        } => {
            commands::gen_data(
                &env,
                beta,
                n,
                split,
                cli.seed,
                &out_or(&cli.out, "logged.csv"),
            )
            .map_err(other)?;
        }
        Command::Train {
            env,
            data,
            method,
            cfg,
        } => {
            let cfg = cfg.load().map_err(Failure::Config)?;
            commands::train(
                &cfg,
                &env,
                &data,
                method,
                cli.seed,
                &out_or(&cli.out, "train"),
            )
            .map_err(other)?;
        }
        Command::Depsue { env, data, k, cfg } => {
            let cfg = cfg.load().map_err(Failure::Config)?;
            commands::depsue(&cfg, &env, &data, k, cli.seed, &out_or(&cli.out, "depsue"))
                .map_err(other)?;
        }
        Command::Evaluate {
            env,
            policy,
            beta,
            threshold,
            cfg,
        } => {
            let cfg = cfg.load().map_err(Failure::Config)?;
            println!(
                "{}",
                commands::evaluate(&cfg, &env, &policy, beta, threshold).map_err(other)?
            );
        }
        Command::Run { cfg } => {
            let cfg = cfg.load().map_err(Failure::Config)?;
            let out = cli
                .out
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            let ctx = SweepContext::new(cfg).map_err(Failure::Config)?;
            let summary = run_sweep(&ctx, &out, cli.force, cli.threads).map_err(other)?;
            eprintln!(
                "{} computed, {} skipped, {} failed",
                summary.computed,
                summary.skipped,
                summary.failed.len()
            );
            for (id, e) in &summary.failed {
                eprintln!("  {id}: {e}");
            }
            if !summary.failed.is_empty() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Report { dir } => {
            let dir = dir.or(cli.out).unwrap_or_else(|| PathBuf::from("results"));
            print!("{}", report::report(Path::new(&dir)).map_err(other)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(Failure::Config(e)) | Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
