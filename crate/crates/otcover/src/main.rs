use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use otcover::validate::Suite;
use otcover::{ExperimentConfig, HarnessError};

#[derive(Parser, Debug)]
#[command(name = "otcover", version, about = "Coverage control through optimal transport")]
struct Cli {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for the per-N runs.
    #[arg(long, global = true, value_name = "K", default_value_t = 1)]
    threads: usize,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the configured scheme for every N and write artifacts.
    Run,
    /// Run property suites and print a JSON report.
    Validate {
        /// Suites to run; all of them when omitted.
        #[arg(value_enum)]
        suites: Vec<Suite>,
    },
    /// Render figures and curve CSV from a run directory.
    Plot {
        /// Run directory; defaults to `--out` or the configured output.
        dir: Option<PathBuf>,
    },
    /// Print the default configuration.
    PrintConfig,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            HarnessError::Config(c) => HarnessError::Config(otcover::ConfigError::new(None, format!("{}: {c}", p.display()))),
            e => e,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        _ if cli.print_config => {
            print!("{}", ExperimentConfig::default_toml());
            Ok(0)
        }
        None | Some(Command::PrintConfig) => {
            print!("{}", ExperimentConfig::default_toml());
            Ok(0)
        }
        Some(Command::Run) => load(&cli).and_then(|cfg| {
            let summary = otcover::cli_run(&cfg, cli.threads)?;
            for (n, v) in &summary.steady_state {
                eprintln!("N = {n}: steady state {v:.6e}");
            }
            eprintln!("artifacts in {}", cfg.out.display());
            Ok(0)
        }),
        Some(Command::Validate { suites }) => {
            let suites = if suites.is_empty() { Suite::ALL.to_vec() } else { suites.clone() };
            let seed = cli.seed.unwrap_or(0);
            otcover::cli_validate(&suites, seed, cli.out.as_deref()).map(|reports| {
                println!("{}", serde_json::to_string_pretty(&reports).expect("report serializes"));
                if reports.iter().all(|r| r.passed) {
                    0
                } else {
                    1
                }
            })
        }
        Some(Command::Plot { dir }) => load(&cli).and_then(|cfg| {
            let dir = dir.clone().unwrap_or(cfg.out);
            let out = otcover::plot::plot(&dir)?;
            eprintln!("wrote {}", out.curve_csv.display());
            for p in &out.images {
                eprintln!("wrote {}", p.display());
            }
            Ok(0)
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
