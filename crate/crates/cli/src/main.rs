//! `geoskill`: compile expert trajectories, run inference, evolve the
//! library and score the results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use geoskill_core::inference_engine::AblationMode;

use commands::{BatchArgs, CliError, InferArgs};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "geoskill", version, about = "Skill-graph image geolocation")]
struct Cli {
    /// TOML run configuration; falls back to $GEOSKILL_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--override retrieval.k=5`.
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Mode {
    Full,
    WoSkill,
    RandomSkill,
    ShuffledOrder,
    AtomicOnly,
}

impl From<Mode> for AblationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Full => AblationMode::Full,
            Mode::WoSkill => AblationMode::WoSkill,
            Mode::RandomSkill => AblationMode::RandomSkill,
            Mode::ShuffledOrder => AblationMode::ShuffledOrder,
            Mode::AtomicOnly => AblationMode::AtomicOnly,
        }
    }
}

#[derive(clap::Args)]
struct RunFlags {
    /// Library store directory (default: `library_dir` from the config).
    #[arg(long)]
    library: Option<PathBuf>,
    #[arg(long)]
    rollouts: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Distill expert trajectories into a version-0 library.
    Compile {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Geolocate one image and append its record to the log.
    Infer {
        #[arg(long)]
        image: String,
        /// Query id for the record (default: the image reference).
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        records: Option<PathBuf>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Run inference over a dataset manifest with resumable checkpoints.
    BatchInfer {
        #[arg(long)]
        manifest: PathBuf,
        /// Record log to write (default: `paths.records`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the last checkpoint instead of starting over.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        run: RunFlags,
    },
    /// One evolution step over logged records; commits version T+1.
    Evolve {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        records: PathBuf,
        /// Report what would change without committing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Distance, country and faithfulness metrics for a record log.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        faithfulness_gold: Option<PathBuf>,
    },
    /// Summary statistics for the head library version.
    LibraryStats {
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Print the effective configuration with every default spelled out.
    Config,
}

impl RunFlags {
    fn apply(&self, config: &mut RunConfig) -> Result<PathBuf, CliError> {
        if let Some(m) = self.mode {
            config.inference.mode = m.into();
        }
        if let Some(s) = self.seed {
            config.inference.seed = s;
        }
        if let Some(r) = self.rollouts {
            if r == 0 {
                return Err(CliError::usage(anyhow::anyhow!("--rollouts must be at least 1")));
            }
            config.inference.rollouts = r;
        }
        Ok(self.library.clone().unwrap_or_else(|| config.library_dir.clone()))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = RunConfig::load(cli.config.as_deref(), &cli.overrides).map_err(CliError::usage)?;
    match cli.command {
        Command::Compile { input, out, lexicon } => commands::compile(&config, &input, &out, lexicon.as_deref()),
        Command::Infer { image, id, records, run } => {
            let library = run.apply(&mut config)?;
            let args = InferArgs {
                image,
                id,
                library,
                rollouts: config.inference.rollouts,
                records: records.unwrap_or_else(|| config.paths.records.clone()),
            };
            commands::infer(&config, &args)
        }
        Command::BatchInfer { manifest, out, resume, run } => {
            let library = run.apply(&mut config)?;
            let args = BatchArgs {
                manifest,
                library,
                out: out.unwrap_or_else(|| config.paths.records.clone()),
                rollouts: config.inference.rollouts,
                resume,
            };
            commands::batch_infer(&config, &args)
        }
        Command::Evolve { library, records, dry_run } => {
            let library = library.unwrap_or_else(|| config.library_dir.clone());
            commands::evolve(&config, &library, &records, dry_run)
        }
        Command::Eval { predictions, manifest, faithfulness_gold } => {
            commands::eval(&config, &predictions, &manifest, faithfulness_gold.as_deref())
        }
        Command::LibraryStats { library } => {
            let library = library.unwrap_or_else(|| config.library_dir.clone());
            commands::library_stats(&config, &library)
        }
        Command::Config => commands::print_out(&config.dump()),
    }
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
