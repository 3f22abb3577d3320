use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use riskvec_core::error::{Error, ErrorKind};
use riskvec_core::pipeline::{run_pipeline, PipelineConfig, Stage, SCHEMA_VERSION};
use riskvec_core::synth::{synthesize_scenario, write_scenario, ScenarioSpec};

#[derive(Parser)]
#[command(
    name = "riskvec",
    about = "Movement-vector risk scoring of geo-tagged posts",
    disable_version_flag = true
)]
struct Cli {
    /// Print the config schema version and exit
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse posts, select users and build the peer graph
    Ingest(Common),
    /// Per-user and group mean movement vectors
    Vectors(Common),
    /// Risk levels and RBQ per user
    Risk(Common),
    /// Fit topics and label every ingested post
    Classify(Common),
    /// Per-user feature table
    Features(Common),
    /// Regress RBQ on the feature table
    Regress(Common),
    /// Run every stage and publish the bundle atomically
    Run(Common),
    /// Generate a synthetic scenario with ground truth
    Synth {
        /// Scenario spec (TOML); the bundled 50-user scenario when absent
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<PipelineConfig, Error> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &common.out {
        cfg.paths.out = out.clone();
    }
    Ok(cfg)
}

fn exit_for(error: &Error) -> ExitCode {
    match error.kind() {
        ErrorKind::Validation => ExitCode::from(1),
        ErrorKind::Runtime => ExitCode::from(2),
    }
}

fn stage(stage: Stage, common: &Common) -> Result<(), Error> {
    let cfg = load(common)?;
    stage.run(&cfg, &cfg.paths.out)?;
    eprintln!("{}: wrote outputs to {}", stage.name(), cfg.paths.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.version {
        println!("riskvec {} (config schema {SCHEMA_VERSION})", env!("CARGO_PKG_VERSION"));
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(1);
    };
    let result = match command {
        Command::Ingest(c) => stage(Stage::Ingest, &c),
        Command::Vectors(c) => stage(Stage::Vectors, &c),
        Command::Risk(c) => stage(Stage::Risk, &c),
        Command::Classify(c) => stage(Stage::Classify, &c),
        Command::Features(c) => stage(Stage::Features, &c),
        Command::Regress(c) => stage(Stage::Regress, &c),
        Command::Run(c) => match load(&c) {
            Ok(cfg) => match run_pipeline(&cfg) {
                Ok(m) => {
                    eprintln!(
                        "run: {} users selected, bundle in {}",
                        m.counts.selected_users,
                        cfg.paths.out.display()
                    );
                    Ok(())
                }
                Err(failure) => {
                    eprintln!("error: {failure}");
                    return exit_for(&failure.error);
                }
            },
            Err(e) => Err(e),
        },
        Command::Synth { config, seed, out } => (|| {
            let spec = match config {
                Some(path) => ScenarioSpec::load(&path)?,
                None => ScenarioSpec::bundled(),
            };
            let scenario = synthesize_scenario(&spec, seed)?;
            write_scenario(&scenario, &out)?;
            eprintln!(
                "synth: {} users, {} posts in {}",
                scenario.truth.users.len(),
                scenario.posts.len(),
                out.display()
            );
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
