use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bwsurge_cli::output::OutputDir;
use bwsurge_cli::reproduce::{reproduce, FIGURES};
use bwsurge_cli::{cmd_classify, cmd_fluid, cmd_qos, cmd_run, cmd_simulate, prepare, CliError, Options};

#[derive(Parser)]
#[command(name = "surge", version, about = "Bandwidth-sharing networks under priority scaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the fluid integration tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scaled process for every k of the scenario.
    Simulate { scenario: String },
    /// Integrate the averaged fluid ODE.
    Fluid { scenario: String },
    /// Equilibria, regime and robust stability.
    Classify { scenario: String },
    /// Priority rescaling for a streaming blocking target.
    Qos { scenario: String },
    /// Every output requested by the scenario.
    Run { scenario: String },
    /// Write the data behind one figure.
    Reproduce { figure: String },
    /// Parse and check a scenario without running it.
    Validate { scenario: String },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Validation(format!("--jobs: {e}")))?;
    }
    let opts = Options {
        out: cli.out,
        seed: cli.seed,
        tol: cli.tol,
    };
    let scenario = match &cli.command {
        Command::Simulate { scenario }
        | Command::Fluid { scenario }
        | Command::Classify { scenario }
        | Command::Qos { scenario }
        | Command::Run { scenario }
        | Command::Validate { scenario } => Some(prepare(scenario, &opts)?),
        Command::Reproduce { figure } => {
            if !FIGURES.contains(&figure.as_str()) {
                return Err(CliError::Validation(format!(
                    "unknown figure id {figure:?}; valid ids: {}",
                    FIGURES.join(", ")
                )));
            }
            None
        }
    };
    if let (Command::Validate { .. }, Some(s)) = (&cli.command, &scenario) {
        println!("{}: ok", s.label());
        return Ok(());
    }
    let mut out = OutputDir::create(&opts.out)?;
    let result = match (&cli.command, &scenario) {
        (Command::Simulate { .. }, Some(s)) => cmd_simulate(s, &mut out),
        (Command::Fluid { .. }, Some(s)) => cmd_fluid(s, &mut out),
        (Command::Classify { .. }, Some(s)) => cmd_classify(s, &mut out).map(|t| print!("{t}")),
        (Command::Qos { .. }, Some(s)) => cmd_qos(s, &mut out).map(|t| print!("{t}")),
        (Command::Run { .. }, Some(s)) => cmd_run(s, &mut out),
        (Command::Reproduce { figure }, _) => reproduce(figure, opts.seed.unwrap_or(1), &mut out),
        _ => unreachable!("scenario commands always load a scenario"),
    };
    // Partial outputs are still listed.
    let files = out.finish()?;
    for f in &files {
        eprintln!("wrote {}", f.display());
    }
    result
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
