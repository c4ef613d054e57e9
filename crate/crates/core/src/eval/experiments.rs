//! Experiment harnesses: infilling originality, corpus originality,
//! attribute-control accuracy and style-similarity trials.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::roll::masked_jaccard;
use super::search::{excerpt_rolls, nearest_in_corpus, CorpusIndex, SearchError};
use super::stats::{binomial_test, histogram, median};
use crate::controls::{
    annotate, density_level, duration_level, duration_range, polyphony_range, sounding_polyphony, ControlSpec,
    ControlTable,
};
use crate::predictor::TokenPredictor;
use crate::sampler::{generate_tracks, infill_bars, SampleError, SampleParams, TrackRequest};
use crate::score::{slice_segment, Piece, Program, Track, STEPS_PER_WHOLE};
use crate::tokenizer::Vocab;

pub const SEGMENT_TRACKS: usize = 4;
pub const SEGMENT_BARS: usize = 8;
/// Seeds of consecutive trials are this far apart, leaving room for retries.
const TRIAL_SEED_STRIDE: u64 = 1 << 16;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("insufficient corpus: {0}")]
    InsufficientCorpus(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("generation failed: {0}")]
    Sample(#[from] SampleError),
}

/// Supplies the predictor for one infill trial, given the segment and mask.
pub type PredictorFactory<'a> = dyn Fn(&Piece, &[(usize, usize)]) -> Arc<dyn TokenPredictor> + Sync + 'a;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    RetriesExhausted,
    Budget,
}

#[derive(Clone, Debug)]
pub struct InfillTrial {
    pub trial: usize,
    pub piece: usize,
    pub segment_start: usize,
    pub track: usize,
    pub first_bar: usize,
    pub n_bars: usize,
    pub original: Piece,
    pub generated: Option<Piece>,
    pub status: TrialStatus,
}

impl InfillTrial {
    pub fn mask(&self) -> Vec<(usize, usize)> {
        (self.first_bar..self.first_bar + self.n_bars).map(|b| (self.track, b)).collect()
    }
}

fn segment_starts(piece: &Piece) -> Vec<usize> {
    if piece.tracks.len() < SEGMENT_TRACKS || piece.bar_count() < SEGMENT_BARS {
        return Vec::new();
    }
    let meters = piece.meters();
    (0..=meters.len() - SEGMENT_BARS)
        .filter(|&s| meters[s..s + SEGMENT_BARS].iter().all(|m| m.steps() == Some(STEPS_PER_WHOLE)))
        .collect()
}

/// Inputs shared by the infill-based experiments.
#[derive(Clone, Copy)]
pub struct InfillSetup<'a> {
    pub pieces: &'a [Piece],
    pub n_bars: usize,
    pub trials: usize,
    pub predictor: &'a PredictorFactory<'a>,
    pub vocab: &'a Vocab,
    pub params: &'a SampleParams,
    /// When set, each segment is annotated with its controls before
    /// infilling, and the prompt carries them.
    pub table: Option<&'a ControlTable>,
    pub seed: u64,
}

/// Runs `trials` infills of `n_bars` consecutive bars on one track of a
/// random 4-track 8-bar 4/4 segment.
pub fn infill_trials(setup: &InfillSetup<'_>) -> Result<Vec<InfillTrial>, ExperimentError> {
    let InfillSetup { pieces, n_bars, trials, predictor, vocab, params, table, seed } = *setup;
    if n_bars == 0 || n_bars > SEGMENT_BARS {
        return Err(ExperimentError::InsufficientCorpus(format!("cannot blank {n_bars} of {SEGMENT_BARS} bars")));
    }
    let eligible: Vec<(usize, Vec<usize>)> =
        pieces.iter().enumerate().map(|(i, p)| (i, segment_starts(p))).filter(|(_, s)| !s.is_empty()).collect();
    if eligible.is_empty() {
        return Err(ExperimentError::InsufficientCorpus("no piece has 4 tracks and 8 consecutive 4/4 bars".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setups: Vec<_> = (0..trials)
        .map(|trial| {
            let (pi, starts) = eligible.choose(&mut rng).expect("non-empty");
            let start = *starts.choose(&mut rng).expect("non-empty");
            let mut tracks: Vec<usize> = (0..pieces[*pi].tracks.len()).collect();
            tracks.shuffle(&mut rng);
            tracks.truncate(SEGMENT_TRACKS);
            tracks.sort_unstable();
            let track = rng.random_range(0..SEGMENT_TRACKS);
            let first_bar = rng.random_range(0..=SEGMENT_BARS - n_bars);
            (trial, *pi, start, tracks, track, first_bar)
        })
        .collect();
    setups
        .into_par_iter()
        .map(|(trial, pi, start, tracks, track, first_bar)| {
            let mut original = slice_segment(&pieces[pi], start, SEGMENT_BARS, &tracks).expect("eligible window");
            if let Some(table) = table {
                original = annotate(&original, table);
            }
            let mut t = InfillTrial {
                trial,
                piece: pi,
                segment_start: start,
                track,
                first_bar,
                n_bars,
                original,
                generated: None,
                status: TrialStatus::Ok,
            };
            let mask = t.mask();
            let model = predictor(&t.original, &mask);
            let p = SampleParams {
                seed: params.seed.wrapping_add(trial as u64 * TRIAL_SEED_STRIDE),
                with_controls: table.is_some(),
                ..params.clone()
            };
            match infill_bars(&t.original, &mask, &model, vocab, &p) {
                Ok(g) => t.generated = Some(g),
                Err(SampleError::RetriesExhausted { last, .. }) => {
                    t.generated = Some(*last);
                    t.status = TrialStatus::RetriesExhausted;
                }
                Err(SampleError::Budget { .. }) => t.status = TrialStatus::Budget,
                Err(e) => return Err(e.into()),
            }
            Ok(t)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramCsvRow {
    pub bin: String,
    pub bin_lo: Option<f64>,
    pub bin_hi: Option<f64>,
    pub count: usize,
    pub percent: f64,
}

/// Histogram rows, with an extra labelled row for values that are missing.
pub fn histogram_rows(values: &[Option<f64>], edges: &[f64], missing_label: &str) -> Vec<HistogramCsvRow> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let missing = values.len() - present.len();
    let total = values.len();
    let mut rows: Vec<HistogramCsvRow> = histogram(&present, edges)
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let close = if i + 2 == edges.len() { ']' } else { ')' };
            HistogramCsvRow {
                bin: format!("[{:.2},{:.2}{close}", r.bin_lo, r.bin_hi),
                bin_lo: Some(r.bin_lo),
                bin_hi: Some(r.bin_hi),
                count: r.count,
                percent: pct(r.count, total),
            }
        })
        .collect();
    if missing > 0 {
        rows.push(HistogramCsvRow {
            bin: missing_label.to_string(),
            bin_lo: None,
            bin_hi: None,
            count: missing,
            percent: pct(missing, total),
        });
    }
    rows
}

fn pct(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JaccardRow {
    pub trial: usize,
    pub piece: usize,
    pub segment_start: usize,
    pub track: usize,
    pub first_bar: usize,
    pub n_bars: usize,
    pub status: TrialStatus,
    pub jaccard: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct InfillReport {
    pub rows: Vec<JaccardRow>,
    pub histogram: Vec<HistogramCsvRow>,
}

/// Jaccard index between original and infilled bars for each trial.
pub fn infilling_originality_experiment(
    setup: &InfillSetup<'_>,
    edges: &[f64],
) -> Result<InfillReport, ExperimentError> {
    let runs = infill_trials(setup)?;
    let rows: Vec<JaccardRow> = runs
        .iter()
        .map(|t| JaccardRow {
            trial: t.trial,
            piece: t.piece,
            segment_start: t.segment_start,
            track: t.track,
            first_bar: t.first_bar,
            n_bars: t.n_bars,
            status: t.status,
            jaccard: t.generated.as_ref().map(|g| masked_jaccard(&t.original, g, &t.mask()).expect("same layout")),
        })
        .collect();
    let values: Vec<Option<f64>> = rows.iter().map(|r| r.jaccard).collect();
    Ok(InfillReport { histogram: histogram_rows(&values, edges, "failed"), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OriginalityRow {
    pub trial: usize,
    pub piece: usize,
    pub track: usize,
    pub first_bar: usize,
    pub n_bars: usize,
    pub status: TrialStatus,
    /// Largest per-bar nearest distance; empty when a bar had no candidate.
    pub distance: Option<f64>,
    pub matched: bool,
}

#[derive(Clone, Debug)]
pub struct OriginalityReport {
    pub rows: Vec<OriginalityRow>,
    pub histogram: Vec<HistogramCsvRow>,
}

/// Hamming distance from each infilled excerpt to its nearest training
/// excerpt, bar by bar.
pub fn corpus_originality_experiment(
    setup: &InfillSetup<'_>,
    index: &CorpusIndex,
    prefilter: Option<f64>,
    threshold: f64,
    edges: &[f64],
) -> Result<OriginalityReport, ExperimentError> {
    let runs = infill_trials(setup)?;
    let mut rows = Vec::with_capacity(runs.len());
    for t in &runs {
        let (distance, matched) = match &t.generated {
            Some(g) => {
                let rolls = excerpt_rolls(g, t.track, t.first_bar..t.first_bar + t.n_bars).expect("segments are 4/4");
                let res = nearest_in_corpus(&rolls, index, prefilter)?;
                (res.aggregate(), res.matched(threshold))
            }
            None => (None, false),
        };
        rows.push(OriginalityRow {
            trial: t.trial,
            piece: t.piece,
            track: t.track,
            first_bar: t.first_bar,
            n_bars: t.n_bars,
            status: t.status,
            distance,
            matched,
        });
    }
    let values: Vec<Option<f64>> = rows.iter().map(|r| r.distance).collect();
    Ok(OriginalityReport { histogram: histogram_rows(&values, edges, "no_candidate"), rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Density,
    Duration,
    Polyphony,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlRow {
    pub trial: usize,
    pub program: String,
    pub status: TrialStatus,
    /// Requested density level, or the low end of a requested range.
    pub requested_lo: u8,
    pub requested_hi: u8,
    /// Measured density level; empty for range controls.
    pub measured: Option<u8>,
    pub abs_diff: Option<u8>,
    /// Notes (duration) or sounding steps (polyphony) measured.
    pub n_values: usize,
    pub percent_inside: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlSummaryRow {
    /// `diff=<k>` for density, `range=<lo>-<hi>` otherwise.
    pub condition: String,
    pub trials: usize,
    pub percent_of_trials: f64,
    pub mean_percent_inside: Option<f64>,
    pub trials_at_least_70: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ControlReport {
    pub kind: ControlKind,
    pub rows: Vec<ControlRow>,
    pub summary: Vec<ControlSummaryRow>,
}

fn in_range(v: u8, (lo, hi): (u8, u8)) -> bool {
    lo <= v && v <= hi
}

/// Generates 8-bar tracks from scratch under one requested control and
/// measures how well the output honours it.
#[allow(clippy::too_many_arguments)]
pub fn attribute_control_experiment(
    kind: ControlKind,
    trials: usize,
    predictor: &dyn TokenPredictor,
    vocab: &Vocab,
    table: &ControlTable,
    corpus: &[Piece],
    params: &SampleParams,
    seed: u64,
) -> Result<ControlReport, ExperimentError> {
    let sources: Vec<&Track> = corpus.iter().flat_map(|p| &p.tracks).filter(|t| t.note_count() > 0).collect();
    if sources.is_empty() {
        return Err(ExperimentError::InsufficientCorpus("corpus has no non-empty tracks".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let setups: Vec<(usize, Program, (u8, u8))> = (0..trials)
        .map(|trial| {
            let src = sources.choose(&mut rng).expect("non-empty");
            let requested = match kind {
                ControlKind::Density => {
                    let levels = table.attainable_levels(src.program, 128 - 30);
                    let l = *levels.choose(&mut rng).unwrap_or(&0);
                    (l, l)
                }
                ControlKind::Duration => duration_range(src).expect("non-empty track"),
                ControlKind::Polyphony => polyphony_range(src).expect("non-empty track"),
            };
            (trial, src.program, requested)
        })
        .collect();
    let gen_params = SampleParams { n_bars: SEGMENT_BARS, ..params.clone() };
    let rows: Vec<ControlRow> = setups
        .into_par_iter()
        .map(|(trial, program, requested)| {
            let controls = match kind {
                ControlKind::Density => ControlSpec { density: Some(requested.0), ..ControlSpec::default() },
                ControlKind::Duration => ControlSpec { dur_range: Some(requested), ..ControlSpec::default() },
                ControlKind::Polyphony => ControlSpec { poly_range: Some(requested), ..ControlSpec::default() },
            };
            let request = TrackRequest { program: Some(program), controls };
            let p = SampleParams {
                seed: gen_params.seed.wrapping_add(trial as u64 * TRIAL_SEED_STRIDE),
                ..gen_params.clone()
            };
            let mut row = ControlRow {
                trial,
                program: program.key(),
                status: TrialStatus::Ok,
                requested_lo: requested.0,
                requested_hi: requested.1,
                measured: None,
                abs_diff: None,
                n_values: 0,
                percent_inside: None,
            };
            let track = match generate_tracks(&Piece::default(), 1, &[request], predictor, vocab, &p) {
                Ok(piece) => piece.tracks.into_iter().next().expect("one new track"),
                Err(SampleError::Budget { .. }) => {
                    row.status = TrialStatus::Budget;
                    return Ok(row);
                }
                Err(e) => return Err(ExperimentError::from(e)),
            };
            match kind {
                ControlKind::Density => {
                    let m = density_level(&track, table);
                    row.measured = Some(m);
                    row.abs_diff = Some(m.abs_diff(requested.0));
                }
                ControlKind::Duration | ControlKind::Polyphony => {
                    let values: Vec<u8> = if kind == ControlKind::Duration {
                        track.global_notes().map(|(_, n)| duration_level(n.duration)).collect()
                    } else {
                        sounding_polyphony(&track)
                    };
                    row.n_values = values.len();
                    if !values.is_empty() {
                        let inside = values.iter().filter(|&&v| in_range(v, requested)).count();
                        row.percent_inside = Some(pct(inside, values.len()));
                    }
                }
            }
            Ok(row)
        })
        .collect::<Result<_, ExperimentError>>()?;
    let summary = summarize_controls(kind, &rows);
    Ok(ControlReport { kind, rows, summary })
}

fn summarize_controls(kind: ControlKind, rows: &[ControlRow]) -> Vec<ControlSummaryRow> {
    let total = rows.len();
    if kind == ControlKind::Density {
        let mut out: Vec<ControlSummaryRow> = (0..10u8)
            .map(|d| {
                let n = rows.iter().filter(|r| r.abs_diff == Some(d)).count();
                ControlSummaryRow {
                    condition: format!("diff={d}"),
                    trials: n,
                    percent_of_trials: pct(n, total),
                    mean_percent_inside: None,
                    trials_at_least_70: None,
                }
            })
            .collect();
        let failed = rows.iter().filter(|r| r.abs_diff.is_none()).count();
        if failed > 0 {
            out.push(ControlSummaryRow {
                condition: "failed".into(),
                trials: failed,
                percent_of_trials: pct(failed, total),
                mean_percent_inside: None,
                trials_at_least_70: None,
            });
        }
        return out;
    }
    let mut groups: BTreeMap<(u8, u8), Vec<&ControlRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.requested_lo, r.requested_hi)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((lo, hi), rs)| {
            let measured: Vec<f64> = rs.iter().filter_map(|r| r.percent_inside).collect();
            ControlSummaryRow {
                condition: format!("range={lo}-{hi}"),
                trials: rs.len(),
                percent_of_trials: pct(rs.len(), total),
                mean_percent_inside: (!measured.is_empty())
                    .then(|| measured.iter().sum::<f64>() / measured.len() as f64),
                trials_at_least_70: Some(measured.iter().filter(|&&p| p >= 70.0).count()),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], w: impl Write) -> Result<(), ExperimentError> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// A similarity measure between excerpts. `fit` is called once per trial
/// with the groups under comparison and the reference corpus sample.
pub trait SimilarityMetric {
    fn fit(&mut self, groups: &[&[Piece]], corpus: &[Piece]);
    fn similarity(&self, a: &Piece, b: &Piece) -> f64;
}

/// Cosine similarity of duration-weighted pitch-class histograms.
#[derive(Clone, Debug, Default)]
pub struct PitchClassMetric;

fn pitch_class_profile(p: &Piece) -> [f64; 12] {
    let mut h = [0.0; 12];
    for t in p.tracks.iter().filter(|t| !t.program.is_drum()) {
        for (_, n) in t.global_notes() {
            h[usize::from(n.pitch % 12)] += f64::from(n.duration);
        }
    }
    h
}

impl SimilarityMetric for PitchClassMetric {
    fn fit(&mut self, _groups: &[&[Piece]], _corpus: &[Piece]) {}

    fn similarity(&self, a: &Piece, b: &Piece) -> f64 {
        let (x, y) = (pitch_class_profile(a), pitch_class_profile(b));
        let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot / (nx * ny)
        }
    }
}

/// Median similarity over all cross pairs.
pub fn median_similarity(metric: &dyn SimilarityMetric, a: &[Piece], b: &[Piece]) -> f64 {
    let mut sims: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| metric.similarity(x, y))).collect();
    median(&mut sims).unwrap_or(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub trials: usize,
    /// Trials where the originals were no closer to the corpus than the
    /// generated excerpts.
    pub successes: usize,
    pub p_value: f64,
}

/// Drops pairs whose generated excerpt nearly duplicates the original.
pub fn drop_near_duplicates(pairs: &[(Piece, Piece)], limit: f64) -> (Vec<Piece>, Vec<Piece>) {
    pairs
        .iter()
        .filter(|(o, g)| {
            let cells: Vec<(usize, usize)> =
                (0..o.tracks.len()).flat_map(|t| (0..o.tracks[t].bars.len()).map(move |b| (t, b))).collect();
            masked_jaccard(o, g, &cells).map_or(true, |j| j < limit)
        })
        .cloned()
        .unzip()
}

/// Per trial, draws 25 originals, 25 generated excerpts and 50 corpus
/// excerpts, and checks whether S(originals, corpus) <= S(generated, corpus).
pub fn similarity_trials(
    originals: &[Piece],
    generated: &[Piece],
    corpus: &[Piece],
    metric: &mut dyn SimilarityMetric,
    trials: usize,
    seed: u64,
) -> Result<SimilarityReport, ExperimentError> {
    if originals.is_empty() || generated.is_empty() || corpus.is_empty() {
        return Err(ExperimentError::InsufficientCorpus("similarity trials need three non-empty sets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successes = 0;
    for _ in 0..trials {
        let o: Vec<Piece> = originals.choose_multiple(&mut rng, 25).cloned().collect();
        let g: Vec<Piece> = generated.choose_multiple(&mut rng, 25).cloned().collect();
        let c: Vec<Piece> = corpus.choose_multiple(&mut rng, 50).cloned().collect();
        metric.fit(&[&o, &g], &c);
        if median_similarity(metric, &o, &c) <= median_similarity(metric, &g, &c) {
            successes += 1;
        }
    }
    Ok(SimilarityReport { trials, successes, p_value: binomial_test(successes as u64, trials as u64, 0.5) })
}
