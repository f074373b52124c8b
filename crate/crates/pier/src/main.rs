//! `pier` command line: synthetic corpus generation, staged training,
//! evaluation, and the ablation matrix.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pier::config::{self, AblateConfig, EvalCliConfig, GenConfig, TrainCliConfig};
use pier::run;

#[derive(Parser)]
#[command(
    name = "pier",
    about = "Train and evaluate attention-fusion representations for potentially idiomatic expressions on a synthetic corpus",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; omit to use defaults where possible.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory for this run's artifacts.
    #[arg(long)]
    out: PathBuf,

    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic PIE corpus (lexicon, train/test JSONL, manifest).
    Gen(Common),
    /// Train one stage (base, adapter, fusion, or full-finetune).
    Train(Common),
    /// Evaluate a checkpoint: intrinsic metrics, probes, and reports.
    Eval(Common),
    /// Run the full variant matrix over several seeds and check orderings.
    Ablate(Common),
}

fn load_config<T: serde::de::DeserializeOwned + Default>(
    common: &Common,
) -> anyhow::Result<(T, Option<PathBuf>)> {
    match &common.config {
        Some(path) => Ok((config::load_toml(path)?, Some(path.clone()))),
        None => Ok((T::default(), None)),
    }
}

fn load_config_required<T: serde::de::DeserializeOwned>(
    common: &Common,
) -> anyhow::Result<(T, PathBuf)> {
    match &common.config {
        Some(path) => Ok((config::load_toml(path)?, path.clone())),
        None => anyhow::bail!("this subcommand requires --config"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = dispatch(cli);
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Gen(common) => {
            let (mut cfg, _) = load_config::<Common2Gen>(&common).map(|(c, p)| (c.0, p))?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            run::cmd_gen(&cfg, &common.out, common.force)?;
            Ok(true)
        }
        Command::Train(common) => {
            let (mut cfg, path) = load_config_required::<TrainCliConfig>(&common)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            cfg.corpus = config::resolve_path(&path, &cfg.corpus);
            if let Some(prior) = &cfg.prior {
                cfg.prior = Some(config::resolve_path(&path, prior));
            }
            run::cmd_train(&cfg, &common.out, common.force)?;
            Ok(true)
        }
        Command::Eval(common) => {
            let (mut cfg, path) = load_config_required::<EvalCliConfig>(&common)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            cfg.corpus = config::resolve_path(&path, &cfg.corpus);
            cfg.checkpoint = config::resolve_path(&path, &cfg.checkpoint);
            run::cmd_eval(&cfg, &common.out, common.force)?;
            Ok(true)
        }
        Command::Ablate(common) => {
            let (mut cfg, path) = load_config_required::<AblateConfig>(&common)?;
            if let Some(seed) = common.seed {
                // a single override seed replaces the whole list
                cfg.seeds = vec![seed];
            }
            cfg.corpus = config::resolve_path(&path, &cfg.corpus);
            let outcome = run::cmd_ablate(&cfg, &common.out, common.force)?;
            Ok(outcome.all_passed())
        }
    }
}

/// Newtype so gen can fall back to defaults without a config file.
struct Common2Gen(GenConfig);

impl Default for Common2Gen {
    fn default() -> Self {
        Common2Gen(GenConfig::default())
    }
}

impl<'de> serde::Deserialize<'de> for Common2Gen {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        GenConfig::deserialize(d).map(Common2Gen)
    }
}
