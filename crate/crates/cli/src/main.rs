use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wellplan_cli::{load_config, run_stages, ExitStatus, Stage};

#[derive(Debug, Parser)]
#[command(name = "wellplan", version, about = "Contamination risk clustering and well sampling design")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the stage artifacts and the manifest.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    /// Overrides the design and simulation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize test records, candidates and counties.
    Ingest,
    /// Build the spatial graph and select the penalty by BIC.
    Fit,
    /// Per-cluster sample sizes.
    Size,
    /// Select new sampling locations.
    Design,
    /// Write a synthetic dataset and a matching config.
    Simulate,
    /// Summarize the run as markdown and SVG maps.
    Report,
    /// Run ingest, fit, size, design and report in order.
    Run,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stages: Vec<Stage> = match cli.command {
        Command::Ingest => vec![Stage::Ingest],
        Command::Fit => vec![Stage::Fit],
        Command::Size => vec![Stage::Size],
        Command::Design => vec![Stage::Design],
        Command::Simulate => vec![Stage::Simulate],
        Command::Report => vec![Stage::Report],
        Command::Run => Stage::PIPELINE.to_vec(),
    };
    let result = load_config(cli.config.as_deref(), cli.seed).and_then(|cfg| run_stages(cfg, &cli.run_dir, &stages));
    match result {
        Ok(summaries) => {
            let mut warnings = Vec::new();
            for s in summaries {
                println!("{}", s.message);
                for w in &s.warnings {
                    eprintln!("warning: {}: {w}", s.stage);
                }
                warnings.extend(s.warnings);
            }
            ExitCode::from(ExitStatus::from_warnings(&warnings) as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(ExitStatus::InputError as u8)
        }
    }
}
