use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icurisk_cli::{run_stages, synth, version_string, CliError, RunConfig, SynthOptions};

#[derive(Parser)]
#[command(name = "icurisk", about = "ICU mortality risk pipeline", disable_version_flag = true)]
struct Cli {
    /// Print toolkit and model-format versions.
    #[arg(long)]
    version: bool,

    /// Worker threads for parallel stages (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration (JSON).
    #[arg(long, short)]
    config: PathBuf,

    /// Overrides `output_dir` from the config.
    #[arg(long, env = "ICURISK_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Every stage in order.
    Run(StageArgs),
    /// Validate inputs and split train/test.
    Ingest(StageArgs),
    /// Fit the imputation policy and fill missing cells.
    Impute(StageArgs),
    /// VIF pruning, feature elimination and overrides.
    Select(StageArgs),
    /// Oversample, fit the booster and baselines.
    Train(StageArgs),
    /// Score the test set (and external cohort) and write the report.
    Evaluate(StageArgs),
    /// SHAP and LIME explanations.
    Explain(StageArgs),
    /// Generate a synthetic cohort.
    Synth {
        #[arg(long, default_value_t = 9474)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, short, default_value = "data")]
        out: PathBuf,
        /// Also write a shifted external cohort with this many rows.
        #[arg(long, default_value_t = 0)]
        external_n: usize,
        #[arg(long, default_value_t = 4242)]
        external_seed: u64,
        #[arg(long, default_value_t = 0.5)]
        external_shrink: f64,
    },
}

fn stage_config(args: &StageArgs) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

fn dispatch(command: Command) -> Result<Vec<PathBuf>, CliError> {
    let (args, stages): (StageArgs, &[&str]) = match command {
        Command::Synth { n, seed, out, external_n, external_seed, external_shrink } => {
            return synth(&SynthOptions { n, seed, output_dir: out, external_n, external_seed, external_shrink });
        }
        Command::Run(a) => (a, &["ingest", "impute", "select", "train", "evaluate", "explain"]),
        Command::Ingest(a) => (a, &["ingest"]),
        Command::Impute(a) => (a, &["impute"]),
        Command::Select(a) => (a, &["select"]),
        Command::Train(a) => (a, &["train"]),
        Command::Evaluate(a) => (a, &["evaluate"]),
        Command::Explain(a) => (a, &["explain"]),
    };
    run_stages(&stage_config(&args)?, stages)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.version {
        println!("{}", version_string());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: no subcommand given (try --help)");
        return ExitCode::from(2);
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| dispatch(command)) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
