use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use bess_core::analysis::{analyze, MetricsReport};
use bess_core::io::{load_scenario, read_trace, write_metrics, write_trace};
use bess_core::scenario::ControlMode;
use bess_core::{preset, IoError, Preset, Scenario, SimError, SimTrace};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bess-sim",
    version,
    about = "Battery energy storage control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace and metrics.
    Run(RunArgs),
    /// Run a preset under decentralized and centralized control side by side.
    Compare(CompareArgs),
    /// Recompute metrics for an existing trace.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["config", "preset"]))]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario: paper_tracking, paper_failure, paper_equalization.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    metrics: PathBuf,
    /// Write every N-th row of the trace.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    decimate: u32,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    preset: String,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    decimate: u32,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Failure class, mapped to the process exit status.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::Config(e.into()),
            SimError::Infeasible { .. } => Failure::Runtime(e.into()),
        }
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn scenario_from(config: Option<&Path>, preset_name: Option<&str>) -> Result<Scenario, Failure> {
    match (config, preset_name) {
        (Some(path), _) => load_scenario(path).map_err(|e| match e {
            IoError::Io { .. } => Failure::Config(anyhow!(e)),
            other => Failure::Config(anyhow!(other).context(format!("loading {}", path.display()))),
        }),
        (None, Some(name)) => named_preset(name),
        (None, None) => Err(Failure::Config(anyhow!(
            "either --config or --preset is required"
        ))),
    }
}

fn named_preset(name: &str) -> Result<Scenario, Failure> {
    name.parse::<Preset>()
        .map(preset)
        .map_err(|e| Failure::Config(e.into()))
}

fn simulate(scenario: &Scenario) -> Result<(SimTrace, MetricsReport), Failure> {
    let trace = bess_core::run(scenario)?;
    let report = analyze(&trace, scenario).map_err(runtime)?;
    Ok((trace, report))
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let scenario = scenario_from(args.config.as_deref(), args.preset.as_deref())?;
    let (trace, report) = simulate(&scenario)?;
    write_trace(&trace, &args.trace, args.decimate as usize).map_err(runtime)?;
    write_metrics(&report, &args.metrics).map_err(runtime)?;
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    let decentralized = Scenario {
        mode: ControlMode::Decentralized,
        ..named_preset(&args.preset)?
    };
    let centralized = Scenario {
        mode: ControlMode::Centralized,
        ..decentralized.clone()
    };

    // Each run owns its own engine, so the two modes can proceed in parallel.
    let (dec, cen) = std::thread::scope(|s| {
        let dec = s.spawn(|| simulate(&decentralized));
        let cen = s.spawn(|| simulate(&centralized));
        (dec.join(), cen.join())
    });
    let (dec_trace, dec_report) =
        dec.map_err(|_| runtime(anyhow!("decentralized run panicked")))??;
    let (cen_trace, cen_report) =
        cen.map_err(|_| runtime(anyhow!("centralized run panicked")))??;

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(Failure::Runtime)?;
    let decimate = args.decimate as usize;
    write_trace(&dec_trace, args.out.join("decentralized.csv"), decimate).map_err(runtime)?;
    write_trace(&cen_trace, args.out.join("centralized.csv"), decimate).map_err(runtime)?;

    let doc = serde_json::json!({
        "scenario": decentralized.name,
        "decentralized": dec_report,
        "centralized": cen_report,
    });
    write_metrics(&doc, args.out.join("metrics.json")).map_err(runtime)?;
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), Failure> {
    let scenario = scenario_from(Some(&args.config), None)?;
    let trace = read_trace(&args.trace, &scenario).map_err(|e| match e {
        IoError::Config(_) => Failure::Config(e.into()),
        other => runtime(other),
    })?;
    let report = analyze(&trace, &scenario).map_err(runtime)?;
    write_metrics(&report, &args.out).map_err(runtime)?;
    Ok(())
}

fn main() -> ExitCode {
    // Usage mistakes count as configuration errors; exit status 2 is reserved
    // for runtime failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Analyze(args) => cmd_analyze(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
    }
}
