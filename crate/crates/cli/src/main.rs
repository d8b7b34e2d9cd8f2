use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use medcoop::{Category, Error};

mod commands;
mod config;

#[derive(Parser)]
#[command(
    name = "medcoop",
    version,
    about = "Few-shot prompt learning with LLM prompt ensembles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (flat JSON object).
    #[arg(short, long)]
    config: PathBuf,
    /// Hyperparameter overrides, `key=value`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Query the LLM endpoint (or load the offline bank) and write the prompt bank.
    GenPrompts(Common),
    /// Encode the prompt bank into an embedding cache.
    EncodeBank(Common),
    /// Encode raw image features into an embedding cache.
    EncodeImages(Common),
    /// Score prompts against the support set and report the selection.
    Select(Common),
    /// Train the context for every seed; writes checkpoints and logs.
    Train(Common),
    /// Evaluate trained (or untrained) contexts on the test split.
    Eval(Common),
    /// Train on base classes, evaluate on base and novel classes.
    BaseToNovel(Common),
    /// Write a synthetic separable dataset and a config that runs on it.
    Synthetic(commands::SyntheticArgs),
}

fn exit_code(category: Category) -> u8 {
    match category {
        Category::Config => 2,
        Category::Data => 3,
        Category::Numeric => 4,
        Category::Network => 5,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let (common, handler): (Common, fn(&config::LoadedConfig) -> medcoop::Result<()>) = match cli.command {
        Command::GenPrompts(c) => (c, commands::gen_prompts),
        Command::EncodeBank(c) => (c, commands::encode_bank),
        Command::EncodeImages(c) => (c, commands::encode_images),
        Command::Select(c) => (c, commands::select),
        Command::Train(c) => (c, commands::train),
        Command::Eval(c) => (c, commands::eval),
        Command::Synthetic(args) => return commands::synthetic(&args),
        Command::BaseToNovel(mut c) => {
            if !c.overrides.iter().any(|o| o.starts_with("benchmark=")) {
                c.overrides.push("benchmark=base-to-novel".into());
            }
            (c, commands::base_to_novel)
        }
    };
    let cfg = config::parse_config(&common.config, &common.overrides)?;
    log::info!("config {} seed {}", cfg.short_digest(), cfg.run.seed);
    handler(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BMCOOP_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", category.as_str());
            ExitCode::from(exit_code(category))
        }
    }
}
