use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fluidpoll::{io, CliError, ExperimentConfig, Outcome};

#[derive(Parser)]
#[command(name = "fluidpoll", version, about = "Fluid-optimal control of polling systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the configured one, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured number of replications.
    #[arg(long, global = true)]
    replications: Option<usize>,
    /// Worker threads for parallel replications.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Periodic equilibrium of the configured control.
    Pe,
    /// Optimize the proportions over the configured multiplicities.
    Optimize,
    /// Simulate the scaled systems.
    Simulate,
    /// Scaled cost against the fluid cost across the configured scales.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Pe => "pe",
            Command::Optimize => "optimize",
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let started = std::time::SystemTime::now();
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(r) = cli.replications {
        let sim = cfg
            .simulation
            .as_mut()
            .ok_or_else(|| CliError::Config("--replications needs a simulation block".into()))?;
        sim.replications = r;
    }
    cfg.check()?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {threads} threads: {e}")))?;
    let outcome: Outcome = pool.install(|| match cli.command {
        Command::Pe => fluidpoll::cmd_pe(&cfg),
        Command::Optimize => fluidpoll::cmd_optimize(&cfg),
        Command::Simulate => fluidpoll::cmd_simulate(&cfg),
        Command::Sweep => fluidpoll::cmd_sweep(&cfg),
    })?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    io::write_outputs(&out_dir, cli.command.name(), &outcome.files, started)?;
    print!("{}", outcome.report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
