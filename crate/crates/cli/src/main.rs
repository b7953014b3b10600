mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{EvalSource, Sweep};
use config::{parse_frames, parse_input_size, parse_list, RunConfig};
use error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "smplgait", version)]
#[command(about = "Silhouette + SMPL gait recognition: synthetic data, training, embedding, retrieval evaluation")]
#[command(after_help = "Config values can be overridden with SMPLGAIT_<SECTION>_<KEY>=value, e.g.
  SMPLGAIT_TRAIN_EPOCHS=20 SMPLGAIT_MODEL_PART_DIM=64 smplgait train ...
Precedence: flags > environment > --config file > defaults.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure, 1 other.")]
struct Cli {
    /// TOML file with [model] [train] [loss] [preprocess] [synth] [eval] sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for data generation, training and test-frame subsampling
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Normalized frame size as WxH, e.g. 88x128 or 44x64
    #[arg(long, global = true, value_name = "WxH")]
    input_size: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    /// Silhouette branch only
    No3d,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic silhouette + SMPL dataset with a manifest
    Synth {
        #[arg(long)]
        out: PathBuf,

        /// Query and gallery drawn from different view clusters
        #[arg(long)]
        confounded: bool,
    },

    /// Train on a manifest's training split
    Train {
        /// Dataset directory or manifest file
        #[arg(long)]
        data: PathBuf,

        #[arg(long)]
        out: PathBuf,

        #[arg(long, value_enum)]
        ablation: Option<Ablation>,

        /// Frames per training sequence; a range (10..50, 10..50:5) or list runs a sweep
        #[arg(long, conflicts_with = "ids")]
        frames: Option<String>,

        /// Comma-separated training identity counts, one run each
        #[arg(long)]
        ids: Option<String>,

        /// Continue from a checkpoint written by an earlier run
        #[arg(long, conflicts_with_all = ["frames", "ids"])]
        resume: Option<PathBuf>,
    },

    /// Embed the query and gallery sequences of a manifest
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,

        #[arg(long)]
        data: PathBuf,

        #[arg(long)]
        out: PathBuf,
    },

    /// Rank the gallery for every query and report Rank-1/5, mAP and mINP
    Evaluate {
        #[arg(long, requires = "data", required_unless_present = "embeddings")]
        checkpoint: Option<PathBuf>,

        #[arg(long)]
        data: Option<PathBuf>,

        /// Embeddings file (or directory) written by `embed`
        #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
        embeddings: Option<PathBuf>,

        #[arg(long)]
        out: PathBuf,

        /// Fraction of test frames kept, or a comma-separated list for a sweep
        #[arg(long)]
        test_frac: Option<String>,

        /// Write sweep.csv with one metrics row per test fraction
        #[arg(long)]
        emit_plots: bool,

        /// Ignore gallery sequences from the query's camera
        #[arg(long)]
        exclude_same_camera: bool,
    },
}

fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.apply_env(std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(size) = &cli.input_size {
        let (h, w) = parse_input_size(size)?;
        cfg.set_input_size(h, w);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads {n}: {e}")))?;
    }
    let mut cfg = resolve_config(&cli)?;
    let strict = cli.config.is_some();
    match cli.command {
        Command::Synth { out, confounded } => {
            cfg.synth.validate()?;
            commands::cmd_synth(&cfg, &out, confounded)
        }
        Command::Train {
            data,
            out,
            ablation,
            frames,
            ids,
            resume,
        } => {
            if ablation == Some(Ablation::No3d) {
                cfg.model.enable_3d_branch = false;
            }
            let sweep = match (frames, ids) {
                (Some(arg), _) => {
                    let values = parse_frames(&arg)?;
                    if values.len() == 1 && !arg.contains("..") {
                        cfg.train.frames = values[0];
                        Sweep::Single
                    } else {
                        Sweep::Frames(values)
                    }
                }
                (None, Some(arg)) => Sweep::Ids(parse_list(&arg)?),
                (None, None) => Sweep::Single,
            };
            cfg.validate()?;
            commands::cmd_train(&cfg, &data, &out, &sweep, resume.as_deref())
        }
        Command::Embed { checkpoint, data, out } => {
            cfg.validate_eval()?;
            commands::cmd_embed(&cfg, &checkpoint, &data, &out, strict)
        }
        Command::Evaluate {
            checkpoint,
            data,
            embeddings,
            out,
            test_frac,
            emit_plots,
            exclude_same_camera,
        } => {
            cfg.eval.exclude_same_camera |= exclude_same_camera;
            if embeddings.is_some() && test_frac.is_some() {
                return Err(CliError::Config("--test-frac needs --checkpoint; embeddings are already computed".into()));
            }
            let fracs = match test_frac {
                Some(arg) => parse_list::<f64>(&arg)?,
                None => vec![cfg.eval.test_frac],
            };
            if fracs.len() == 1 {
                cfg.eval.test_frac = fracs[0];
            }
            cfg.validate_eval()?;
            let source = match (checkpoint, data, embeddings) {
                (Some(checkpoint), Some(data), None) => EvalSource::Checkpoint { checkpoint, data },
                (None, None, Some(path)) => EvalSource::Embeddings(path),
                _ => return Err(CliError::Config("give --checkpoint with --data, or --embeddings".into())),
            };
            commands::cmd_evaluate(&cfg, &source, &out, &fracs, emit_plots, strict)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
