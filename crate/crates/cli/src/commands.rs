use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use trackfill_core::controls::{annotate, build_density_table, ControlSpec, ControlTable};
use trackfill_core::corpus::{bundled_minicorpus, load_dir, pieces_in, CorpusFile};
use trackfill_core::eval::experiments::{
    attribute_control_experiment, corpus_originality_experiment, infilling_originality_experiment, write_csv,
    ControlKind, ControlSummaryRow, HistogramCsvRow, InfillSetup, PredictorFactory,
};
use trackfill_core::eval::search::CorpusIndex;
use trackfill_core::eval::stats::default_edges;
use trackfill_core::midi::{parse_midi, write_midi};
use trackfill_core::predictor::stub::EchoControlsPredictor;
use trackfill_core::predictor::{
    make_training_examples, perplexity, NGramModel, PipelineParams, Split, TokenPredictor, TrainingExample,
    UniformPredictor,
};
use trackfill_core::sampler::{generate_tracks, infill_bars, SampleParams, TrackRequest};
use trackfill_core::score::{Piece, Program};
use trackfill_core::tokenizer::{decode, encode_barfill, encode_multitrack, EncodeOptions, TokenSeq, Vocab};
use trackfill_server::{load_predictor, load_table, Config};

use crate::error::{CliError, ErrorClass};
use crate::{ControlArg, Format, PredictorKind};

/// Training examples drawn when an n-gram model is needed but none is configured.
const ON_THE_FLY_EXAMPLES: usize = 1000;
const VALID_EXAMPLES: usize = 200;

pub struct Ctx {
    cfg: Config,
    format: Option<Format>,
    vocab: Vocab,
    corpus: OnceLock<Vec<CorpusFile>>,
    table: OnceLock<ControlTable>,
}

impl Ctx {
    pub fn new(cfg: Config, format: Option<Format>) -> Self {
        Ctx { cfg, format, vocab: Vocab::new(), corpus: OnceLock::new(), table: OnceLock::new() }
    }

    fn corpus(&self) -> Result<&[CorpusFile], CliError> {
        if let Some(c) = self.corpus.get() {
            return Ok(c);
        }
        let dir = self.cfg.corpus.clone().unwrap_or_else(bundled_minicorpus);
        let files = load_dir(&dir, self.cfg.expressive)?;
        if files.is_empty() {
            return Err(CliError::input(format!("corpus {} contains no MIDI files", dir.display())));
        }
        Ok(self.corpus.get_or_init(|| files))
    }

    fn split(&self, split: Split) -> Result<Vec<Piece>, CliError> {
        let pieces = pieces_in(self.corpus()?, split);
        if pieces.is_empty() {
            return Err(CliError::input(format!("corpus has no {split:?} pieces")));
        }
        Ok(pieces)
    }

    /// The configured density table, or one built from the training split.
    fn table(&self) -> Result<&ControlTable, CliError> {
        if let Some(t) = self.table.get() {
            return Ok(t);
        }
        let table = match load_table(self.cfg.density_table.as_deref())? {
            Some(t) => t,
            None => build_density_table(&self.split(Split::Train)?).map_err(|e| CliError::input(e.to_string()))?,
        };
        Ok(self.table.get_or_init(|| table))
    }

    fn pipeline(&self, seed: u64) -> PipelineParams {
        PipelineParams { expressive: self.cfg.expressive, seed, ..PipelineParams::default() }
    }

    fn examples(&self, split: Split, count: usize, seed: u64) -> Result<Vec<TrainingExample>, CliError> {
        make_training_examples(&self.split(split)?, &self.vocab, Some(self.table()?), &self.pipeline(seed), count)
            .map_err(|e| CliError::input(e.to_string()))
    }

    fn train(&self, seqs: &[Vec<u32>]) -> Result<NGramModel, CliError> {
        NGramModel::train(&self.vocab, seqs, self.cfg.ngram_order, self.cfg.ngram_alpha)
            .map_err(|e| CliError::new(ErrorClass::Config, e.to_string()))
    }

    fn predictor(&self, kind: PredictorKind) -> Result<Arc<dyn TokenPredictor>, CliError> {
        Ok(match kind {
            PredictorKind::Uniform => Arc::new(UniformPredictor::new(&self.vocab)),
            PredictorKind::Echo => Arc::new(EchoControlsPredictor::new(&self.vocab, self.table()?.clone())),
            PredictorKind::Ngram if self.cfg.model.is_some() => load_predictor(self.cfg.model.as_deref(), &self.vocab)?,
            PredictorKind::Ngram => {
                let ex = self.examples(Split::Train, ON_THE_FLY_EXAMPLES, self.cfg.seed)?;
                let seqs: Vec<Vec<u32>> = ex.into_iter().map(|e| e.seq.ids).collect();
                Arc::new(self.train(&seqs)?)
            }
        })
    }

    fn params(&self) -> SampleParams {
        SampleParams { with_controls: true, ..self.cfg.sample_params() }
    }

    fn read_piece(&self, path: &Path) -> Result<Piece, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        parse_midi(&bytes, self.cfg.expressive).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    fn write_piece(&self, path: &Path, piece: &Piece) -> Result<(), CliError> {
        std::fs::write(path, write_midi(piece, self.cfg.expressive)).map_err(|e| CliError::io(path, e))
    }

    /// Prints a result object on stdout: compact JSON, or pretty JSON for `--format text`.
    fn emit(&self, value: &impl Serialize) -> Result<(), CliError> {
        let text = match self.format {
            Some(Format::Text) => serde_json::to_string_pretty(value),
            _ => serde_json::to_string(value),
        }
        .expect("serializable");
        println!("{text}");
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    write_csv(rows, create(path)?)?;
    Ok(())
}

fn make_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn strip_controls(mut piece: Piece) -> Piece {
    for t in &mut piece.tracks {
        t.controls = None;
    }
    piece
}

/// Parses `track:bar,track:bar`.
pub fn parse_mask(s: &str) -> Result<Vec<(usize, usize)>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (t, b) =
                p.split_once(':').ok_or_else(|| CliError::usage(format!("mask entry {p:?} is not track:bar")))?;
            let num = |x: &str| x.trim().parse::<usize>().map_err(|_| CliError::usage(format!("bad mask entry {p:?}")));
            Ok((num(t)?, num(b)?))
        })
        .collect()
}

/// Parses `lo-hi` or a single value.
fn parse_range(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::usage(format!("expected N or LO-HI, got {s:?}"));
    let num = |x: &str| x.trim().parse::<usize>().map_err(|_| bad());
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (num(a)?, num(b)?),
        None => (num(s)?, num(s)?),
    };
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn parse_u8_range(s: &str) -> Result<(u8, u8), CliError> {
    let (lo, hi) = parse_range(s)?;
    let cast = |v: usize| u8::try_from(v).map_err(|_| CliError::usage(format!("{v} is out of range")));
    Ok((cast(lo)?, cast(hi)?))
}

pub fn parse_request(
    program: Option<&str>,
    density: Option<u8>,
    poly: Option<&str>,
    dur: Option<&str>,
) -> Result<Option<TrackRequest>, CliError> {
    let program = program
        .map(|p| Program::from_key(p).ok_or_else(|| CliError::usage(format!("unknown program {p:?}"))))
        .transpose()?;
    let controls = ControlSpec {
        density,
        poly_range: poly.map(parse_u8_range).transpose()?,
        dur_range: dur.map(parse_u8_range).transpose()?,
    };
    Ok((program.is_some() || !controls.is_empty()).then_some(TrackRequest { program, controls }))
}

pub fn tokenize(
    ctx: &Ctx,
    input: &Path,
    mask: Option<&str>,
    controls: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let mut piece = ctx.read_piece(input)?;
    if controls {
        piece = annotate(&piece, ctx.table()?);
    }
    let opts = EncodeOptions { expressive: ctx.cfg.expressive, with_controls: controls };
    let seq = match mask {
        Some(m) => encode_barfill(&piece, &ctx.vocab, &parse_mask(m)?, opts),
        None => encode_multitrack(&piece, &ctx.vocab, opts),
    }
    .map_err(|e| CliError::input(e.to_string()))?;
    let text = match ctx.format {
        Some(Format::Text) => seq.ids.iter().map(|&id| ctx.vocab.display(id) + "\n").collect(),
        _ => serde_json::to_string(&seq).expect("serializable") + "\n",
    };
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::io(path, e)),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

pub fn detokenize(ctx: &Ctx, input: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let text = match input {
        Some(p) if p != Path::new("-") => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
        _ => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s).map_err(|e| CliError::io(Path::new("<stdin>"), e))?;
            s
        }
    };
    let seq: TokenSeq =
        serde_json::from_str(text.trim()).map_err(|e| CliError::input(format!("not a token sequence: {e}")))?;
    let decoded = decode(&seq, &ctx.vocab).map_err(|e| CliError::input(e.to_string()))?;
    ctx.write_piece(out, &decoded.piece)?;
    ctx.emit(&json!({
        "out": out,
        "tracks": decoded.piece.tracks.len(),
        "bars": decoded.piece.bar_count(),
        "notes": decoded.piece.note_count(),
    }))
}

pub fn build_tables(ctx: &Ctx, out: Option<&Path>) -> Result<(), CliError> {
    let text = ctx.table()?.to_json();
    match out {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| CliError::io(p, e))?;
            ctx.emit(&json!({ "out": p, "programs": ctx.table()?.programs().count() }))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn make_examples(ctx: &Ctx, count: usize, out: &Path, controls: bool) -> Result<(), CliError> {
    let table = if controls { Some(ctx.table()?) } else { None };
    let ex = make_training_examples(&ctx.split(Split::Train)?, &ctx.vocab, table, &ctx.pipeline(ctx.cfg.seed), count)
        .map_err(|e| CliError::input(e.to_string()))?;
    let mut w = create(out)?;
    for e in &ex {
        serde_json::to_writer(&mut w, e).expect("serializable");
        w.write_all(b"\n").map_err(|e| CliError::io(out, e))?;
    }
    w.flush().map_err(|e| CliError::io(out, e))?;
    let tokens: usize = ex.iter().map(|e| e.seq.ids.len()).sum();
    ctx.emit(&json!({ "out": out, "examples": ex.len(), "tokens": tokens }))
}

fn read_examples(path: &Path) -> Result<Vec<Vec<u32>>, CliError> {
    let r = BufReader::new(File::open(path).map_err(|e| CliError::io(path, e))?);
    let mut seqs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: TrainingExample =
            serde_json::from_str(&line).map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        seqs.push(ex.seq.ids);
    }
    Ok(seqs)
}

pub fn train_ngram(ctx: &Ctx, examples: Option<&Path>, count: usize, out: &Path) -> Result<(), CliError> {
    let seqs = match examples {
        Some(p) => read_examples(p)?,
        None => ctx.examples(Split::Train, count, ctx.cfg.seed)?.into_iter().map(|e| e.seq.ids).collect(),
    };
    let model = ctx.train(&seqs)?;
    model.save(create(out)?).map_err(|e| CliError::new(ErrorClass::Io, e.to_string()))?;
    let valid: Vec<Vec<u32>> = match ctx.examples(Split::Valid, VALID_EXAMPLES, ctx.cfg.seed.wrapping_add(1)) {
        Ok(ex) => ex.into_iter().map(|e| e.seq.ids).collect(),
        Err(_) => Vec::new(),
    };
    let ppl = if valid.is_empty() {
        None
    } else {
        Some(perplexity(&model, &valid).map_err(|e| CliError::new(ErrorClass::Generation, e.to_string()))?)
    };
    ctx.emit(&json!({
        "out": out,
        "order": model.order(),
        "alpha": model.alpha(),
        "train_sequences": seqs.len(),
        "valid_perplexity": ppl,
    }))
}

pub fn generate(
    ctx: &Ctx,
    input: Option<&Path>,
    n_new: usize,
    request: Option<TrackRequest>,
    kind: PredictorKind,
    out: &Path,
) -> Result<(), CliError> {
    let piece = match input {
        Some(p) => ctx.read_piece(p)?,
        None => Piece::new(Vec::new()),
    };
    let table = ctx.table()?;
    let predictor = ctx.predictor(kind)?;
    let overrides: Vec<TrackRequest> = request.into_iter().collect();
    let result = generate_tracks(&annotate(&piece, table), n_new, &overrides, &*predictor, &ctx.vocab, &ctx.params())?;
    let result = strip_controls(result);
    ctx.write_piece(out, &result)?;
    ctx.emit(&json!({
        "out": out,
        "new_track_indices": (piece.tracks.len()..result.tracks.len()).collect::<Vec<_>>(),
        "programs": result.tracks[piece.tracks.len()..].iter().map(|t| t.program.key()).collect::<Vec<_>>(),
        "notes": result.note_count(),
    }))
}

pub fn infill(
    ctx: &Ctx,
    input: &Path,
    track: usize,
    bars: &str,
    kind: PredictorKind,
    out: &Path,
) -> Result<(), CliError> {
    let piece = ctx.read_piece(input)?;
    let (lo, hi) = parse_range(bars)?;
    if track >= piece.tracks.len() || hi >= piece.bar_count() {
        return Err(CliError::input(format!(
            "track {track} bars {lo}-{hi} outside a piece of {} tracks and {} bars",
            piece.tracks.len(),
            piece.bar_count()
        )));
    }
    let mask: Vec<(usize, usize)> = (lo..=hi).map(|b| (track, b)).collect();
    let table = ctx.table()?;
    let predictor = ctx.predictor(kind)?;
    let result = strip_controls(infill_bars(&annotate(&piece, table), &mask, &*predictor, &ctx.vocab, &ctx.params())?);
    ctx.write_piece(out, &result)?;
    let changed = mask.iter().filter(|&&(t, b)| result.tracks[t].bars[b] != piece.tracks[t].bars[b]).count();
    ctx.emit(&json!({ "out": out, "track": track, "bars": [lo, hi], "changed_bars": changed }))
}

fn factory(predictor: Arc<dyn TokenPredictor>) -> impl Fn(&Piece, &[(usize, usize)]) -> Arc<dyn TokenPredictor> + Sync {
    move |_: &Piece, _: &[(usize, usize)]| predictor.clone()
}

fn report_dir(dir: Option<&Path>) -> Result<Option<PathBuf>, CliError> {
    if let Some(d) = dir {
        make_dir(d)?;
    }
    Ok(dir.map(Path::to_path_buf))
}

/// Writes rows to stdout as CSV, or as JSON with `--format json`.
fn print_rows<T: Serialize>(ctx: &Ctx, rows: &[T]) -> Result<(), CliError> {
    match ctx.format {
        Some(Format::Json) | Some(Format::Text) => ctx.emit(&rows),
        _ => {
            write_csv(rows, io::stdout().lock())?;
            Ok(())
        }
    }
}

pub fn eval_originality(
    ctx: &Ctx,
    n_bars: usize,
    trials: usize,
    kind: PredictorKind,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let dir = report_dir(out_dir)?;
    let files = ctx.corpus()?;
    let train: Vec<&CorpusFile> = files.iter().filter(|f| f.split() == Split::Train).collect();
    let index = CorpusIndex::build(train.iter().map(|f| (f.name.as_str(), &f.piece)));
    let test = ctx.split(Split::Test)?;
    let table = ctx.table()?;
    let make = factory(ctx.predictor(kind)?);
    let params = ctx.params();
    let setup = InfillSetup {
        pieces: &test,
        n_bars,
        trials,
        predictor: &make as &PredictorFactory,
        vocab: &ctx.vocab,
        params: &params,
        table: Some(table),
        seed: ctx.cfg.seed,
    };
    let report = corpus_originality_experiment(
        &setup,
        &index,
        Some(ctx.cfg.prefilter),
        ctx.cfg.match_threshold,
        &default_edges(),
    )?;
    match dir {
        Some(d) => {
            let rows = d.join(format!("originality_n{n_bars}_rows.csv"));
            let hist = d.join(format!("originality_n{n_bars}_histogram.csv"));
            csv_file(&rows, &report.rows)?;
            csv_file(&hist, &report.histogram)?;
            let matched = report.rows.iter().filter(|r| r.matched).count();
            ctx.emit(&json!({
                "rows": rows,
                "histogram": hist,
                "trials": report.rows.len(),
                "matched": matched,
                "seconds": started.elapsed().as_secs_f64(),
            }))
        }
        None => print_rows(ctx, &report.histogram),
    }
}

#[derive(Serialize)]
struct InfillHistogramRow {
    n_bars: usize,
    bin: String,
    bin_lo: Option<f64>,
    bin_hi: Option<f64>,
    count: usize,
    percent: f64,
}

impl InfillHistogramRow {
    fn new(n_bars: usize, h: &HistogramCsvRow) -> Self {
        InfillHistogramRow {
            n_bars,
            bin: h.bin.clone(),
            bin_lo: h.bin_lo,
            bin_hi: h.bin_hi,
            count: h.count,
            percent: h.percent,
        }
    }
}

pub fn eval_infill(
    ctx: &Ctx,
    n_bars: &[usize],
    trials: usize,
    kind: PredictorKind,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    if n_bars.is_empty() {
        return Err(CliError::usage("--n-bars needs at least one value"));
    }
    let started = Instant::now();
    let dir = report_dir(out_dir)?;
    let test = ctx.split(Split::Test)?;
    let table = ctx.table()?;
    let make = factory(ctx.predictor(kind)?);
    let params = ctx.params();
    let mut combined = Vec::new();
    let mut files = Vec::new();
    for &n in n_bars {
        let setup = InfillSetup {
            pieces: &test,
            n_bars: n,
            trials,
            predictor: &make as &PredictorFactory,
            vocab: &ctx.vocab,
            params: &params,
            table: Some(table),
            seed: ctx.cfg.seed,
        };
        let report = infilling_originality_experiment(&setup, &default_edges())?;
        if let Some(d) = &dir {
            let rows = d.join(format!("infill_n{n}_rows.csv"));
            let hist = d.join(format!("infill_n{n}_histogram.csv"));
            csv_file(&rows, &report.rows)?;
            csv_file(&hist, &report.histogram)?;
            files.push(rows);
            files.push(hist);
        }
        combined.extend(report.histogram.iter().map(|h| InfillHistogramRow::new(n, h)));
    }
    match dir {
        Some(d) => {
            let path = d.join("infill_histogram.csv");
            csv_file(&path, &combined)?;
            files.push(path);
            ctx.emit(&json!({ "files": files, "seconds": started.elapsed().as_secs_f64() }))
        }
        None => print_rows(ctx, &combined),
    }
}

#[derive(Serialize)]
struct KindSummaryRow {
    kind: ControlKind,
    condition: String,
    trials: usize,
    percent_of_trials: f64,
    mean_percent_inside: Option<f64>,
    trials_at_least_70: Option<usize>,
}

impl KindSummaryRow {
    fn new(kind: ControlKind, s: &ControlSummaryRow) -> Self {
        KindSummaryRow {
            kind,
            condition: s.condition.clone(),
            trials: s.trials,
            percent_of_trials: s.percent_of_trials,
            mean_percent_inside: s.mean_percent_inside,
            trials_at_least_70: s.trials_at_least_70,
        }
    }
}

fn kind_name(kind: ControlKind) -> &'static str {
    match kind {
        ControlKind::Density => "density",
        ControlKind::Duration => "duration",
        ControlKind::Polyphony => "polyphony",
    }
}

pub fn eval_controls(
    ctx: &Ctx,
    kind: ControlArg,
    trials: usize,
    predictor: PredictorKind,
    out_dir: Option<&Path>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let dir = report_dir(out_dir)?;
    let kinds = match kind {
        ControlArg::Density => vec![ControlKind::Density],
        ControlArg::Duration => vec![ControlKind::Duration],
        ControlArg::Polyphony => vec![ControlKind::Polyphony],
        ControlArg::All => vec![ControlKind::Density, ControlKind::Duration, ControlKind::Polyphony],
    };
    let train = ctx.split(Split::Train)?;
    let table = ctx.table()?;
    let model = ctx.predictor(predictor)?;
    let params = ctx.params();
    let mut combined = Vec::new();
    let mut files = Vec::new();
    for k in kinds {
        let report =
            attribute_control_experiment(k, trials, &*model, &ctx.vocab, table, &train, &params, ctx.cfg.seed)?;
        if let Some(d) = &dir {
            let rows = d.join(format!("controls_{}_rows.csv", kind_name(k)));
            let summary = d.join(format!("controls_{}_summary.csv", kind_name(k)));
            csv_file(&rows, &report.rows)?;
            csv_file(&summary, &report.summary)?;
            files.push(rows);
            files.push(summary);
        }
        combined.extend(report.summary.iter().map(|s| KindSummaryRow::new(k, s)));
    }
    match dir {
        Some(_) => ctx.emit(&json!({ "files": files, "seconds": started.elapsed().as_secs_f64() })),
        None => print_rows(ctx, &combined),
    }
}

pub fn serve(ctx: &Ctx) -> Result<(), CliError> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new(ErrorClass::Io, e.to_string()))?;
    rt.block_on(trackfill_server::serve(&ctx.cfg))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_and_ranges_parse() {
        assert_eq!(parse_mask("0:1, 2:3").unwrap(), vec![(0, 1), (2, 3)]);
        assert!(parse_mask("0-1").is_err());
        assert_eq!(parse_range("2").unwrap(), (2, 2));
        assert_eq!(parse_range("2-3").unwrap(), (2, 3));
        assert_eq!(parse_range("3-2").unwrap_err().class, ErrorClass::Usage);
    }

    #[test]
    fn requests_need_some_content() {
        assert_eq!(parse_request(None, None, None, None).unwrap(), None);
        let r = parse_request(Some("drum"), Some(4), Some("1-3"), None).unwrap().unwrap();
        assert_eq!(r.program, Some(Program::Drum));
        assert_eq!(r.controls, ControlSpec { density: Some(4), poly_range: Some((1, 3)), dur_range: None });
        assert!(parse_request(Some("piano"), None, None, None).is_err());
        assert!(parse_request(None, None, Some("1-300"), None).is_err());
    }
}
