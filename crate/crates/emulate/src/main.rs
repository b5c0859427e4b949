use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use emulate::commands::{cmd_compare, cmd_evaluate, cmd_generate, cmd_predict, cmd_repro, cmd_train, parse_thetas};
use emulate::config::RunConfig;
use emulate_core::ErrorKind;

#[derive(Parser)]
#[command(name = "emulate", version, about = "Train and evaluate emulators of dynamical-system simulators")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory; for `predict`, the output CSV (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Configuration override `key.path=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset.
    Generate,
    /// Train every configured emulator.
    Train,
    /// Predict series from a trained bundle.
    Predict {
        /// Emulator directory written by `train`.
        #[arg(long)]
        bundle: PathBuf,
        /// Parameter sets, `a,b;c,d`.
        #[arg(long, conflicts_with = "theta_file", allow_hyphen_values = true)]
        theta: Option<String>,
        /// CSV with a header and one parameter set per row.
        #[arg(long)]
        theta_file: Option<PathBuf>,
        /// CSV with a single column of times (header `t`).
        #[arg(long)]
        times: PathBuf,
    },
    /// Score the trained emulators on the test runs.
    Evaluate {
        /// Also write histogram data of the log errors.
        #[arg(long)]
        plot: bool,
    },
    /// Rebuild the comparison table from stored reports.
    Compare,
    /// Run a whole experiment and check its acceptance thresholds.
    Repro {
        #[arg(value_parser = ["ds1", "ds2", "catchment"])]
        experiment: String,
    },
}

fn load_config(g: &Global, preset: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match (&g.config, preset) {
        (Some(path), _) => RunConfig::load(path, &g.set)?,
        (None, Some(name)) => RunConfig::preset(name)?.with_overrides(&g.set)?,
        (None, None) => anyhow::bail!("--config is required"),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads")?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Generate => {
            let dir = cmd_generate(&load_config(g, None)?)?;
            println!("{}", dir.display());
        }
        Command::Train => {
            for log in cmd_train(&load_config(g, None)?)? {
                println!("{}: training RMSE {:.3e}, max abs error {:.3e}", log.name, log.train_rmse, log.train_max_abs_error);
            }
        }
        Command::Predict { bundle, theta, theta_file, times } => {
            let thetas = parse_thetas(theta.as_deref(), theta_file.as_deref())?;
            cmd_predict(bundle, &thetas, times, g.out.as_deref())?;
        }
        Command::Evaluate { plot } => {
            let cfg = load_config(g, None)?;
            cmd_evaluate(&cfg, *plot)?;
            print!("{}", std::fs::read_to_string(cfg.out_dir().join("compare.md"))?);
        }
        Command::Compare => print!("{}", cmd_compare(&load_config(g, None)?)?.render_markdown()),
        Command::Repro { experiment } => {
            let cfg = load_config(g, Some(experiment))?;
            let checks = cmd_repro(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.out_dir().join("compare.md"))?);
            for c in &checks {
                println!("[{}] criterion {}: {} {}", if c.passed { "PASS" } else { "FAIL" }, c.criterion, c.name, c.detail);
            }
            if checks.iter().any(|c| !c.passed) {
                anyhow::bail!(emulate_core::Error::Numerical("acceptance checks failed".into()));
            }
        }
    }
    Ok(())
}

/// 2 input/config, 3 domain, 4 numerical.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<emulate_core::Error>()).map(emulate_core::Error::kind) {
        Some(ErrorKind::Domain) => 3,
        Some(ErrorKind::Numerical) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMU_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
