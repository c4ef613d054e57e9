//! `trackfill`: tokenize MIDI, train the n-gram baseline, generate and
//! infill tracks, run the evaluation harnesses and serve the HTTP API.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "trackfill", version, about = "Multi-track MIDI infilling toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

/// Options accepted by every subcommand. Config keys can be set here, in
/// `TRACKFILL_<KEY>` variables, or in the `--config` file, in that order of
/// precedence.
#[derive(Args)]
struct Global {
    /// Flat TOML config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Base random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output format for machine-readable results.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Set any config key, e.g. `--set max_tokens=4096`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// N-gram model file.
    #[arg(long, global = true, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Density control table (JSON).
    #[arg(long, global = true, value_name = "FILE")]
    density_table: Option<PathBuf>,
    /// Directory of MIDI files; defaults to the bundled mini-corpus.
    #[arg(long, global = true, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Sampling temperature.
    #[arg(long, global = true)]
    temperature: Option<f64>,
    /// Token budget per generation.
    #[arg(long, global = true)]
    max_tokens: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PredictorKind {
    /// The configured n-gram model, or one trained on the corpus on the fly.
    Ngram,
    Uniform,
    /// Stub that writes chords matching the requested density.
    Echo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ControlArg {
    Density,
    Duration,
    Polyphony,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a MIDI file as a token sequence (JSON, or token names with --format text).
    Tokenize {
        input: PathBuf,
        /// Bars to blank out, as `track:bar` pairs, e.g. `0:1,2:3`. Selects bar-fill mode.
        #[arg(long)]
        mask: Option<String>,
        /// Emit attribute-control tokens.
        #[arg(long)]
        controls: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Decode a token sequence (JSON from a file or stdin) back to MIDI.
    Detokenize {
        /// Token sequence file; stdin when omitted or `-`.
        input: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Build the density control table from the training split.
    BuildTables {
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Draw training examples from the training split as JSON lines.
    MakeExamples {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, short)]
        out: PathBuf,
        /// Leave out attribute-control tokens.
        #[arg(long)]
        no_controls: bool,
    },
    /// Train the n-gram baseline.
    TrainNgram {
        /// JSON-lines examples from `make-examples`; drawn from the corpus when omitted.
        #[arg(long)]
        examples: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Add generated tracks to a piece, or start from an empty one.
    Generate {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        n_new: usize,
        /// Instrument of the first new track: a program number or `drum`.
        #[arg(long)]
        program: Option<String>,
        /// Density level of the first new track.
        #[arg(long)]
        density: Option<u8>,
        /// Polyphony range of the first new track, `lo-hi`.
        #[arg(long)]
        poly: Option<String>,
        /// Duration-level range of the first new track, `lo-hi`.
        #[arg(long)]
        dur: Option<String>,
        #[arg(long, value_enum, default_value = "ngram")]
        predictor: PredictorKind,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Regenerate bars of one track.
    Infill {
        input: PathBuf,
        #[arg(long)]
        track: usize,
        /// Zero-based bar or inclusive range, e.g. `2` or `2-3`.
        #[arg(long)]
        bars: String,
        #[arg(long, value_enum, default_value = "ngram")]
        predictor: PredictorKind,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Hamming distance of infilled bars to their nearest training bars.
    EvalOriginality {
        #[arg(long, default_value_t = 4)]
        n_bars: usize,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, value_enum, default_value = "ngram")]
        predictor: PredictorKind,
        /// Directory for per-trial and histogram CSV files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Jaccard index between original and infilled bars.
    EvalInfill {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        n_bars: Vec<usize>,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, value_enum, default_value = "ngram")]
        predictor: PredictorKind,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// How closely generated tracks follow requested attribute controls.
    EvalControls {
        #[arg(long, value_enum, default_value = "all")]
        kind: ControlArg,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, value_enum, default_value = "ngram")]
        predictor: PredictorKind,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        workspace: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut flags = Vec::new();
    let g = &cli.global;
    for raw in &g.set {
        let (k, v) =
            raw.split_once('=').ok_or_else(|| CliError::usage(format!("--set expects KEY=VALUE, got {raw:?}")))?;
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut flag = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            flags.push((key.to_string(), v));
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    flag("seed", g.seed.map(|s| s.to_string()));
    flag("model", path(&g.model));
    flag("density_table", path(&g.density_table));
    flag("corpus", path(&g.corpus));
    flag("temperature", g.temperature.map(|t| t.to_string()));
    flag("max_tokens", g.max_tokens.map(|t| t.to_string()));
    if let Command::Serve { bind, workspace } = &cli.command {
        flag("bind", bind.clone());
        flag("workspace", path(workspace));
    }
    // Paths must stay strings in TOML, so quote them.
    for (k, v) in &mut flags {
        if matches!(k.as_str(), "model" | "density_table" | "corpus" | "workspace" | "bind") && !v.starts_with('"') {
            *v = format!("{v:?}");
        }
    }
    let cfg = trackfill_server::Config::load(g.config.as_deref(), std::env::vars(), &flags)?;
    let ctx = commands::Ctx::new(cfg, g.format);
    match cli.command {
        Command::Tokenize { input, mask, controls, out } => {
            commands::tokenize(&ctx, &input, mask.as_deref(), controls, out.as_deref())
        }
        Command::Detokenize { input, out } => commands::detokenize(&ctx, input.as_deref(), &out),
        Command::BuildTables { out } => commands::build_tables(&ctx, out.as_deref()),
        Command::MakeExamples { count, out, no_controls } => commands::make_examples(&ctx, count, &out, !no_controls),
        Command::TrainNgram { examples, count, out } => commands::train_ngram(&ctx, examples.as_deref(), count, &out),
        Command::Generate { input, n_new, program, density, poly, dur, predictor, out } => {
            let request = commands::parse_request(program.as_deref(), density, poly.as_deref(), dur.as_deref())?;
            commands::generate(&ctx, input.as_deref(), n_new, request, predictor, &out)
        }
        Command::Infill { input, track, bars, predictor, out } => {
            commands::infill(&ctx, &input, track, &bars, predictor, &out)
        }
        Command::EvalOriginality { n_bars, trials, predictor, out_dir } => {
            commands::eval_originality(&ctx, n_bars, trials, predictor, out_dir.as_deref())
        }
        Command::EvalInfill { n_bars, trials, predictor, out_dir } => {
            commands::eval_infill(&ctx, &n_bars, trials, predictor, out_dir.as_deref())
        }
        Command::EvalControls { kind, trials, predictor, out_dir } => {
            commands::eval_controls(&ctx, kind, trials, predictor, out_dir.as_deref())
        }
        Command::Serve { .. } => commands::serve(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.class.code())
        }
    }
}
