mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use swlm_core::Error;

#[derive(Parser)]
#[command(name = "swlm", version, about = "Subword-aware LSTM language models with weight reuse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Model configuration sources, lowest precedence first: config file,
/// dedicated flags, `--set` overrides.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// word | char | syl | morph
    #[arg(long)]
    pub units: Option<String>,
    /// none | re | rw | rerw
    #[arg(long)]
    pub reuse: Option<String>,
    /// Comma-separated embedder layers to reuse (overrides --reuse)
    #[arg(long)]
    pub tie: Option<String>,
    /// Extra key=value override; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes log.csv, best.ckpt, last.ckpt and manifest.json
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory with train/valid/test splits
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perplexity of a checkpoint on a data split
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 10)]
        batch_size: usize,
        #[arg(long, default_value_t = 35)]
        bptt: usize,
        /// Also write a run manifest here
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Segment the word types of a text file into subword units
    Segment {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enumerate (and optionally train) every tying mask of the embedder
    SweepTying {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Only enumerate masks and count parameters
        #[arg(long)]
        dry_run: bool,
        /// Parallel training jobs
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Diagnostics over trained models
    Analyze(AnalyzeArgs),
    /// Parameter counts without a data pass
    CountParams {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Build vocabularies from this data directory instead of the
        /// configured sizes
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report none, re, rw and rerw instead of the configured mode
        #[arg(long)]
        all_reuse: bool,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnalysisKind {
    Neighbors,
    Pca,
    Kde,
    Ttr,
    Oov,
    Params,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub kind: AnalysisKind,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Data directory (oov: the foreign corpus; kde: word sample source)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Query words for neighbors; repeatable
    #[arg(long = "word")]
    pub words: Vec<String>,
    /// input | output
    #[arg(long, default_value = "input")]
    pub side: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Words sampled for the gate density
    #[arg(long, default_value_t = 1000)]
    pub sample: usize,
    /// TTR points CSV (default: bundled fixture)
    #[arg(long)]
    pub points: Option<PathBuf>,
    /// Configs for the parameter report; repeatable
    #[arg(long = "config")]
    pub configs: Vec<PathBuf>,
    /// Report file; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train { cfg, data, out } => commands::train(&cfg, &data, &out),
        Command::Eval {
            model,
            data,
            split,
            batch_size,
            bptt,
            manifest,
        } => commands::eval(&model, &data, &split, batch_size, bptt, manifest.as_deref()),
        Command::Segment { cfg, input, out } => commands::segment(&cfg, &input, &out),
        Command::SweepTying {
            cfg,
            data,
            out,
            dry_run,
            jobs,
        } => commands::sweep(&cfg, data.as_deref(), &out, dry_run, jobs),
        Command::Analyze(args) => commands::analyze(&args),
        Command::CountParams {
            cfg,
            data,
            all_reuse,
            manifest,
        } => commands::count_params(&cfg, data.as_deref(), all_reuse, manifest.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
