use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rvt_core::harness::{run, Command, Overrides, RunConfig, EXIT_FAULT, EXIT_VALIDATION};
use rvt_core::modelio::TranscriptMode;

#[derive(Parser)]
#[command(name = "rvt", version, about = "Build digital twins, generate reasoning benchmarks, evaluate and run the agent")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "rvt.toml")]
    config: PathBuf,
    /// Output directory, overriding `paths.output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Transcript file to record to or replay from.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Videos processed in parallel.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Validate configuration and inputs without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Record,
    Replay,
    Passthrough,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a digital twin for every video.
    BuildDt,
    /// Generate benchmark shards from the twins.
    GenBench,
    /// Score a prediction file against the benchmark.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Answer one query over one video with the plan-and-execute agent.
    Agent {
        #[arg(long)]
        video: String,
        #[arg(long)]
        query: String,
    },
    /// Token statistics of the generated benchmark.
    Stats,
    /// Regenerate all shards from a transcript and check them against the manifest.
    Replay,
    /// Write the synthetic two-video fixture workspace to DIR.
    Fixture { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::BuildDt => Command::BuildDt,
        Cmd::GenBench => Command::GenBench,
        Cmd::Eval { predictions } => Command::Eval { predictions },
        Cmd::Agent { video, query } => Command::Agent { video, query },
        Cmd::Stats => Command::Stats,
        Cmd::Replay => Command::Replay { transcript: cli.transcript.clone() },
        Cmd::Fixture { dir } => {
            return match std::fs::create_dir_all(&dir).and_then(|_| rvt_core::fixture::write_fixture(&dir)) {
                Ok(config) => {
                    println!("fixture: wrote 2 videos and {}", config.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_FAULT as u8)
                }
            };
        }
    };
    let overrides = Overrides {
        output: cli.out,
        transcript: cli.transcript,
        mode: cli.mode.map(|m| match m {
            Mode::Record => TranscriptMode::Record,
            Mode::Replay => TranscriptMode::Replay,
            Mode::Passthrough => TranscriptMode::Passthrough,
        }),
        workers: cli.workers,
    };
    let config = match RunConfig::load(&cli.config, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    match run(&command, &config, cli.dry_run) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", outcome.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            for line in e.to_string().lines() {
                eprintln!("error: {line}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
