use std::path::PathBuf;
use std::process::ExitCode;

use amtl_cli::commands::{self, Overrides};
use amtl_cli::synth::SynthConfig;
use amtl_cli::CliError;
use amtl_core::{FieldVocab, Policy, WarmParts};
use clap::{Args, Parser, Subcommand};

/// Adaptive embedding-dimension selection for CTR models.
#[derive(Parser)]
#[command(name = "amtl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ModelFlags {
    /// key=value config file; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// One of fbe, mde, amtl, aml, amtl-nste.
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl From<ModelFlags> for Overrides {
    fn from(f: ModelFlags) -> Self {
        Overrides {
            config: f.config,
            seed: f.seed,
            policy: f.policy,
            dim: f.dim,
            temperature: f.temperature,
            epochs: f.epochs,
            lr: f.lr,
            batch_size: f.batch_size,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic Zipf dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200_000)]
        examples: usize,
        /// Comma list of name:vocab_size.
        #[arg(long, default_value = "user:1000,item:1000")]
        fields: String,
        #[arg(long, default_value_t = 1.1)]
        zipf: f64,
        #[arg(long, default_value_t = 8)]
        latent_rank: usize,
        #[arg(long, default_value_t = 3.0)]
        interaction: f64,
        #[arg(long, default_value_t = 0.1)]
        test_ratio: f64,
    },
    /// Trains a model; writes model.ckpt, epochs.tsv and timing.tsv into --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long, requires = "warm_parts")]
        warm_from: Option<PathBuf>,
        #[arg(long, requires = "warm_from")]
        warm_parts: Option<String>,
    },
    /// Trains with parameters copied from a checkpoint.
    Warmstart {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        warm_from: PathBuf,
        /// Comma list of emb, head, amtl.
        #[arg(long, default_value = "emb,head")]
        warm_parts: String,
    },
    /// Scores checkpoints on the test split and writes the comparison TSV.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes zero-dropped embedding stores and prints Avg(Dim) and ratio.
    Compress {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes the per-frequency-group dimension profile as CSV.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        groups: Option<usize>,
    },
}

fn parse_fields(list: &str) -> Result<Vec<FieldVocab>, CliError> {
    list.split(',')
        .map(|item| {
            let (name, vocab) = item
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("field `{item}` is not name:vocab_size")))?;
            let vocab = vocab.parse().map_err(|_| CliError::Usage(format!("bad vocabulary size in `{item}`")))?;
            Ok(FieldVocab::new(name, vocab))
        })
        .collect()
}

fn parts(list: &str) -> Result<WarmParts, CliError> {
    WarmParts::parse(list).ok_or_else(|| CliError::Usage(format!("bad --warm-parts `{list}`")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { out, seed, examples, fields, zipf, latent_rank, interaction, test_ratio } => {
            let cfg = SynthConfig {
                fields: parse_fields(&fields)?,
                n_examples: examples,
                zipf_exponent: zipf,
                latent_rank,
                interaction_scale: interaction,
                test_ratio,
                seed,
                ..SynthConfig::default()
            };
            commands::gen_data(&cfg, &out)
        }
        Command::Train { data, out, model, warm_from, warm_parts } => {
            let warm = match (&warm_from, &warm_parts) {
                (Some(path), Some(list)) => Some((path.as_path(), parts(list)?)),
                _ => None,
            };
            commands::train(&data, &out, &model.into(), warm).map(|_| ())
        }
        Command::Warmstart { data, out, model, warm_from, warm_parts } => {
            commands::train(&data, &out, &model.into(), Some((&warm_from, parts(&warm_parts)?))).map(|_| ())
        }
        Command::Evaluate { data, checkpoints, out } => {
            print!("{}", commands::evaluate(&data, &checkpoints, &out)?);
            Ok(())
        }
        Command::Compress { data, checkpoint, out } => {
            print!("{}", commands::compress_model(&data, &checkpoint, &out)?);
            Ok(())
        }
        Command::Analyze { data, checkpoint, out, groups } => {
            commands::analyze(&data, &checkpoint, &out, groups).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
