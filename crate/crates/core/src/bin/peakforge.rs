use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use peakforge::commands::{self, Outcome};
use peakforge::config::{ExperimentConfig, Format};
use peakforge::forward::ObservationSet;

#[derive(Parser)]
#[command(version, about = "Off-grid peak recovery by ℓ1 minimisation on adaptive meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's output.directory, else ./out/<name>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the noise seed and any random-placement seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (falls back to PEAKFORGE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Table format; default writes both.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate observations.
    Simulate,
    /// Solve once on the initial mesh.
    Solve {
        /// Raw observation file; its sidecar is the same path with `.json`.
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Run the adaptive refinement loop.
    Adapt {
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Diagnostic sweep selected by `[scan] kind`.
    Scan,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

fn observations(path: Option<&Path>) -> peakforge::Result<Option<ObservationSet>> {
    path.map(|bin| ObservationSet::read_binary(bin, &bin.with_extension("json"))).transpose()
}

fn run(cli: Cli) -> peakforge::Result<Outcome> {
    let path = cli.config.ok_or_else(|| peakforge::Error::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(f) = cli.format {
        cfg.output.formats = vec![match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }];
    }
    if cfg.name.is_empty() {
        cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    let out = cli
        .out
        .or_else(|| cfg.output.directory.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    Ok(match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out)?,
        Command::Solve { observations: o } => commands::solve(&cfg, observations(o.as_deref())?, &out)?.outcome,
        Command::Adapt { observations: o } => commands::adapt(&cfg, observations(o.as_deref())?, &out)?.outcome,
        Command::Scan => commands::scan(&cfg, &out)?.outcome,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("PEAKFORGE_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(o) => {
            println!("{}", o.summary);
            if o.converged {
                ExitCode::SUCCESS
            } else {
                eprintln!("not converged: {}", o.manifest.error.as_deref().unwrap_or("see manifest.json"));
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
