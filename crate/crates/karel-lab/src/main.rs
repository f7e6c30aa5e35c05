use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use karel_lab::config::RunConfig;
use karel_lab::pipeline::{self, Run};
use karel_lab::stage::Policy;

#[derive(Parser)]
#[command(name = "karel-lab", version, about = "Train a language model on Karel programs and probe it for program semantics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run config file (TOML).
    #[arg(short, long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Use a bundled preset instead of a file: smoke, fast or paper-shape.
    #[arg(short, long)]
    preset: Option<String>,
    /// Override a config key, e.g. `--set lm.total_steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Rebuild a stage whose existing outputs came from a different config.
    #[arg(long)]
    force: bool,
    /// Accept upstream outputs built from a different config.
    #[arg(long)]
    allow_stale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample train and test corpora.
    GenData(Common),
    /// Train the language model, writing checkpoints.
    TrainLm(Common),
    /// Greedy-decode the test split at every checkpoint.
    EvalGen(Common),
    /// Record hidden states aligned with program states.
    Capture(Common),
    /// Train original-semantics probes.
    TrainProbe(Common),
    /// Train probes under the alternative semantics.
    Intervene(Common),
    /// Statistics over the results.
    Analyze(Common),
    /// Emit the report and plot data.
    Report(Common),
    /// Every stage in order.
    All(Common),
    /// Print the resolved config as TOML.
    ShowConfig(Common),
}

fn load(c: &Common) -> Result<Run> {
    let base = match (&c.config, &c.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => anyhow::bail!("pass --config FILE or --preset NAME"),
    };
    let cfg = base.with_overrides(&c.overrides)?;
    rayon::ThreadPoolBuilder::new().num_threads(cfg.workers.max(1)).build_global().ok();
    Run::new(
        cfg,
        Policy {
            force: c.force,
            allow_stale: c.allow_stale,
        },
    )
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(c) => pipeline::gen_data(&load(c)?),
        Command::TrainLm(c) => pipeline::train_lm(&load(c)?),
        Command::EvalGen(c) => pipeline::eval_gen(&load(c)?),
        Command::Capture(c) => pipeline::capture(&load(c)?),
        Command::TrainProbe(c) => pipeline::train_probe(&load(c)?),
        Command::Intervene(c) => pipeline::intervene(&load(c)?),
        Command::Analyze(c) => pipeline::analyze(&load(c)?),
        Command::Report(c) => pipeline::report(&load(c)?),
        Command::All(c) => pipeline::all(&load(c)?),
        Command::ShowConfig(c) => {
            print!("{}", toml::to_string(&load(c)?.cfg)?);
            Ok(())
        }
    }
}
