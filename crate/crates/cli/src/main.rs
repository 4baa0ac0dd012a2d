use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcb_core::config::RunConfig;
use gcb_core::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(
    name = "gcb",
    version,
    about = "Multi-step trajectory prediction over learned Semantic-IDs"
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sets the data, codec and model seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Errors only.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter users and write leave-k-out splits.
    Prepare,
    /// Train the residual quantizer and assign Semantic-IDs.
    TrainCodes,
    /// Train the encoder-decoder generator.
    TrainGen,
    /// Beam-search the test split and write metrics.
    Evaluate,
    /// Write per-cluster category histograms.
    Analyze,
}

enum Failure {
    Config(String),
    Other(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Other(e.to_string())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summary serializes")
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg =
        RunConfig::load(cli.config.as_deref()).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(dir) = &cli.out {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.set_all_seeds(seed);
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let report = match cli.command {
        Command::Prepare => json(&pipeline::cmd_prepare(&cfg)?),
        Command::TrainCodes => json(&pipeline::cmd_train_codes(&cfg)?),
        Command::TrainGen => json(&pipeline::cmd_train_gen(&cfg)?),
        Command::Evaluate => {
            let r = pipeline::cmd_evaluate(&cfg)?;
            r.rows()
                .iter()
                .map(|row| format!("{}\t{:.6}", row.name, row.value))
                .collect::<Vec<_>>()
                .join("\n")
        }
        Command::Analyze => json(&pipeline::cmd_analyze(&cfg)?),
    };
    if !cli.quiet {
        println!("{report}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
