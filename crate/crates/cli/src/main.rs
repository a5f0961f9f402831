use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use driftcal::runner::{execute, write_outputs, ExperimentConfig, RunOptions};

mod bundled;

#[derive(Parser)]
#[command(name = "driftcal", version, about = "Simulate fast-feedback calibration of drifting quantum gates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Config file path or bundled config name (see `driftcal list`).
    #[arg(long)]
    config: String,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for trajectory-level parallelism.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Use the config's full-scale trajectory and shot budget.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    /// Run any config regardless of its kind.
    Run(RunArgs),
    /// List the bundled configs.
    List,
    IocSingle(RunArgs),
    IocMultiGxgy(RunArgs),
    IocMultiCz(RunArgs),
    IocBatched(RunArgs),
    DocSingle(RunArgs),
    #[command(name = "qec_513")]
    Qec513(RunArgs),
    Rabi(RunArgs),
    CompareDutyCycle(RunArgs),
    AnalyticsCheck(RunArgs),
}

fn load(spec: &str) -> Result<ExperimentConfig> {
    let path = Path::new(spec);
    if path.exists() {
        return ExperimentConfig::from_path(path).with_context(|| format!("reading {}", path.display()));
    }
    match bundled::get(spec) {
        Some(text) => ExperimentConfig::from_toml_str(text).with_context(|| format!("bundled config {spec}")),
        None => bail!("no such config file or bundled config: {spec}"),
    }
}

fn run(args: &RunArgs, kind: Option<&str>) -> Result<()> {
    let config = load(&args.config)?;
    let opts = RunOptions { seed: args.seed, workers: args.workers, full_scale: args.full_scale };
    let plan = config.plan(opts.full_scale)?;
    if let Some(kind) = kind {
        if plan.kind != kind {
            bail!("config {} has kind `{}`, not `{kind}`; use `driftcal run`", config.name, plan.kind);
        }
    }
    let out = execute(&config, opts)?;
    let files = write_outputs(&args.out, &out).with_context(|| format!("writing to {}", args.out.display()))?;
    println!("{}", out.digest);
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn list() -> Result<()> {
    for (name, text) in bundled::ALL {
        let cfg = ExperimentConfig::from_toml_str(text)?;
        println!("{name:34} {}", cfg.description);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a, None),
        Command::List => list(),
        Command::IocSingle(a) => run(a, Some("ioc_single")),
        Command::IocMultiGxgy(a) => run(a, Some("ioc_multi_gxgy")),
        Command::IocMultiCz(a) => run(a, Some("ioc_multi_cz")),
        Command::IocBatched(a) => run(a, Some("ioc_batched")),
        Command::DocSingle(a) => run(a, Some("doc_single")),
        Command::Qec513(a) => run(a, Some("qec_513")),
        Command::Rabi(a) => run(a, Some("rabi")),
        Command::CompareDutyCycle(a) => run(a, Some("compare_duty_cycle")),
        Command::AnalyticsCheck(a) => run(a, Some("analytics_check")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
