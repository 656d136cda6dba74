use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use ddmd_cli::{
    cmd_evaluate, cmd_extract, cmd_predict, cmd_serve, cmd_synth, cmd_train, default_workers, CliError, VerdictLine,
};
use ddmd_core::audio_io::Transcoder;
use ddmd_core::forest::Hyperparams;
use ddmd_core::pipeline::ExtractConfig;
use ddmd_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "ddmd", version, about = "Digital drug music detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract features from a DD/NDD corpus into a CSV.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Split, train, evaluate and save a model.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        max_depth: Option<usize>,
    },
    /// Evaluate a saved model on a feature CSV.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify one audio file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Render a labeled synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Run the HTTP classification service.
    Serve {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Overrides DDMD_MAX_UPLOAD_BYTES.
        #[arg(long)]
        max_upload_bytes: Option<u64>,
        #[arg(long, default_value_t = 30.0)]
        fetch_timeout_s: f64,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

fn extract_config() -> ExtractConfig {
    let mut config = ExtractConfig::default();
    config.load.transcoder = Transcoder::from_env();
    config
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Extract { input, out, workers } => {
            let s = cmd_extract(&input, &out, workers.unwrap_or_else(default_workers), &extract_config())?;
            println!("{} rows written to {}", s.rows, out.display());
            if !s.failures.is_empty() {
                println!("{} files failed ({} with unsupported extensions)", s.failures.len(), s.skipped);
            }
        }
        Command::Train { features, model, trees, seed, test_fraction, max_depth } => {
            let hp = Hyperparams { n_trees: trees, max_depth, seed, ..Hyperparams::default() };
            let s = cmd_train(&features, &model, &hp, test_fraction)?;
            println!("trained on {} rows, tested on {}", s.n_train, s.n_test);
            println!("{}", s.report);
            println!("model: {}\nreport: {}", model.display(), s.report_path.display());
        }
        Command::Evaluate { features, model, out } => {
            let report = cmd_evaluate(&features, &model)?;
            println!("{report}");
            if let Some(out) = out {
                std::fs::write(&out, report.to_json_pretty())
                    .map_err(|e| CliError::User(format!("{}: {e}", out.display())))?;
            }
        }
        Command::Predict { model, input } => {
            println!("{}", VerdictLine(cmd_predict(&model, &input, &extract_config())?));
        }
        Command::Synth { out, n_per_class, seed } => {
            let m = cmd_synth(&out, n_per_class, seed)?;
            println!("{} files written under {}", m.entries.len(), out.display());
        }
        Command::Serve { model, host, port, max_upload_bytes, fetch_timeout_s, static_dir } => {
            let mut config = ServiceConfig::from_env().map_err(CliError::User)?;
            if let Some(limit) = max_upload_bytes {
                config.max_upload_bytes = limit;
            }
            if !(fetch_timeout_s.is_finite() && fetch_timeout_s > 0.0) {
                return Err(CliError::User("--fetch-timeout-s must be positive".into()));
            }
            config.fetch_timeout = Duration::from_secs_f64(fetch_timeout_s);
            config.static_dir = static_dir;
            cmd_serve(&host, port, model.as_deref(), config)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
