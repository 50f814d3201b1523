use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use raman_n2n::error::ErrorKind;
use serde_json::json;

mod artifacts;
mod commands;
mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] raman_n2n::Error),
}

impl CliError {
    fn kind(&self) -> (&'static str, u8) {
        match self {
            CliError::Config(_) => ("config", 2),
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => ("config", 2),
                ErrorKind::Data => ("data", 3),
                ErrorKind::Numeric => ("numeric", 4),
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Parser, Debug)]
#[command(name = "raman-n2n", version, about = "Noise2Noise denoising of hyperspectral Raman maps")]
struct Cli {
    /// JSON pipeline configuration; unspecified keys keep their defaults.
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=100`. A flag with a
    /// dotted name (`--train.epochs 100`) does the same.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single ordered gradient accumulation (same as `--set deterministic=true`).
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run the command this many times and report timing mean ± std.
    #[arg(long, global = true, default_value_t = 1)]
    repeat: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Out {
    /// Output directory (created if missing).
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Generate a synthetic phase map with repeated noisy acquisitions.
    Synth {
        #[command(flatten)]
        out: Out,
    },
    /// Crop/resample, despike and baseline-correct every spectrum; also write
    /// the repetition-averaged reference.
    Preprocess {
        #[arg(short, long)]
        input: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Train one model on every point of a dataset.
    Train {
        #[arg(short, long)]
        input: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Grouped k-fold training and evaluation against a reference.
    CrossValidate {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        reference: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Denoise every spectrum of a dataset with a trained model.
    Denoise {
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        /// Leave outputs on the unit-norm scale.
        #[arg(long)]
        no_restore: bool,
        #[command(flatten)]
        out: Out,
    },
    /// K-means on repetition-averaged, unit-norm spectra.
    Cluster {
        #[arg(short, long)]
        input: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Score a dataset (and optionally its denoised counterpart) against a
    /// reference.
    Evaluate {
        #[arg(short, long)]
        reference: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        denoised: Option<PathBuf>,
        /// Known per-point labels (as written by `synth`) for the clustering
        /// column; without it the reference is clustered instead.
        #[arg(short, long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Tune and cross-validate the classical filters.
    Baseline {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        reference: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Noise of block-averaged repetitions versus total averaging time.
    NoiseScan {
        #[arg(short, long)]
        input: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Collect metrics files into one table and compute the workflow speedup.
    Report {
        /// metrics.json / baselines.json files from other commands.
        #[arg(short, long = "metrics", required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
}

/// Rewrite `--a.b=v` / `--a.b v` into `--set a.b=v` so any config key can
/// be given as a flag of the same dotted name. All overrides are moved ahead
/// of the subcommand, in order, since clap replaces rather than extends a
/// global list that appears on both sides of it.
fn expand_dotted(args: Vec<String>) -> Vec<String> {
    let mut it = args.into_iter();
    let mut head: Vec<String> = it.next().into_iter().collect();
    let mut rest = Vec::new();
    while let Some(a) = it.next() {
        if a == "--" {
            rest.push(a);
            rest.extend(it.by_ref());
            break;
        }
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        let pair = if key == "set" {
            inline.or_else(|| it.next())
        } else if key.contains('.') {
            let value = inline.or_else(|| it.next()).unwrap_or_default();
            Some(format!("{key}={value}"))
        } else {
            rest.push(a);
            continue;
        };
        head.push("--set".into());
        head.push(pair.unwrap_or_default());
    }
    head.extend(rest);
    head
}

fn run(cli: Cli, argv: &[String]) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut overrides = cli
        .set
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.to_string()))
                .ok_or_else(|| CliError::Config(format!("override `{s}` is not KEY=VALUE")))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if cli.deterministic {
        overrides.push(("deterministic".into(), "true".into()));
    }
    let cfg = config::resolve(cli.config.as_deref(), &overrides)?;
    if cli.repeat == 0 {
        return Err(CliError::Config("--repeat must be at least 1".into()));
    }
    commands::execute(&cli.command, &cfg, argv, cli.repeat)
}

fn main() -> ExitCode {
    let argv = expand_dotted(std::env::args().collect());
    let cli = Cli::parse_from(&argv);
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = e.kind();
            eprintln!("{}", json!({ "error": { "kind": kind, "message": e.to_string(), "exit_code": code } }));
            ExitCode::from(code)
        }
    }
}
