mod plot;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::plot::PlotError;
use crate::run::{load_config, Experiment, RunError};

#[derive(Parser)]
#[command(name = "barystab", version, about = "Barycenter stability experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment and write CSV/JSON outputs plus a manifest.
    Run {
        #[arg(value_enum)]
        experiment: Experiment,
        /// JSON config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long, env = "BARYSTAB_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "BARYSTAB_THREADS")]
        threads: Option<usize>,
        /// Allow perturbations outside the stated regime.
        #[arg(long)]
        force: bool,
    },
    /// Plot two columns of a CSV file as an SVG.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        loglog: bool,
        /// Output path; defaults to the CSV path with an `.svg` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { experiment, config, out, seed, threads, force } => {
            run_command(experiment, config, out, seed, threads, force)
        }
        Command::Plot { csv, x, y, loglog, out } => plot_command(csv, &x, &y, loglog, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run_command(
    experiment: Experiment,
    config: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    threads: Option<usize>,
    force: bool,
) -> Result<(), RunError> {
    let mut cfg = load_config(config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.force |= force;
    if let Some(n) = threads {
        if n == 0 {
            return Err(RunError::BadConfig("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::BadConfig(e.to_string()))?;
    }
    let manifest = run::run(experiment, cfg, &out)?;
    for f in &manifest.outputs {
        println!("{}", out.join(f).display());
    }
    Ok(())
}

fn plot_command(csv: PathBuf, x: &str, y: &str, loglog: bool, out: Option<PathBuf>) -> Result<(), RunError> {
    let to_run = |e: PlotError| match e {
        PlotError::Io(_) | PlotError::Csv(_) => RunError::Io(e.to_string()),
        _ => RunError::BadConfig(e.to_string()),
    };
    let (xs, ys) = plot::read_columns(&csv, x, y).map_err(to_run)?;
    let svg = plot::render_svg(&xs, &ys, x, y, loglog).map_err(to_run)?;
    let path = out.unwrap_or_else(|| csv.with_extension("svg"));
    std::fs::write(&path, svg).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}
