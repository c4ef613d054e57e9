//! Multi-Track and Bar-Fill token sequences.

pub mod vocab;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controls::ControlSpec;
use crate::sampler::grammar::{GrammarConfig, GrammarError, GrammarState};
use crate::score::{Bar, Note, Piece, Program, ScoreError, TimeSig, Track, DEFAULT_TPQ, DEFAULT_VELOCITY};
pub use vocab::{Token, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MultiTrack,
    BarFill,
}

/// Token ids plus the metadata needed to decode them. Meters are carried
/// alongside the ids since no time-signature tokens exist.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub mode: Mode,
    pub expressive: bool,
    pub meters: Vec<TimeSig>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EncodeOptions {
    pub expressive: bool,
    pub with_controls: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask entry (track {track}, bar {bar}) is out of range")]
    MaskOutOfRange { track: usize, bar: usize },
    #[error("style {0:?} is not in the vocabulary")]
    UnknownStyle(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("token {index}: {source}")]
    Grammar {
        index: usize,
        #[source]
        source: GrammarError,
    },
    #[error("sequence ends before the piece is complete ({fills} of {placeholders} fills)")]
    Incomplete { fills: usize, placeholders: usize },
    #[error(transparent)]
    Score(#[from] ScoreError),
}

impl DecodeError {
    /// Index of the offending token, when one exists.
    pub fn token_index(&self) -> Option<usize> {
        match self {
            DecodeError::Grammar { index, .. } => Some(*index),
            _ => None,
        }
    }
}

/// Decoded piece plus the placeholder positions of a Bar-Fill sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub piece: Piece,
    pub mask: Vec<(usize, usize)>,
}

fn push(vocab: &Vocab, ids: &mut Vec<u32>, t: Token) {
    ids.push(vocab.must(t));
}

fn encode_bar_body(vocab: &Vocab, ids: &mut Vec<u32>, bar: &Bar, expressive: bool) {
    let mut last_onset = None;
    for n in bar.notes() {
        if last_onset != Some(n.onset) {
            push(vocab, ids, Token::TimePosition(n.onset as u8));
            last_onset = Some(n.onset);
        }
        if expressive {
            if n.micro < 0 {
                push(vocab, ids, Token::DeltaNeg);
                push(vocab, ids, Token::Delta(n.micro.unsigned_abs() as u8));
            } else if n.micro > 0 {
                push(vocab, ids, Token::Delta(n.micro as u8));
            }
        }
        push(vocab, ids, Token::NoteOn(n.pitch));
        if expressive {
            push(vocab, ids, Token::Velocity(n.velocity.max(1)));
        }
        push(vocab, ids, Token::Duration(n.duration as u8));
    }
}

fn encode_track_header(vocab: &Vocab, ids: &mut Vec<u32>, track: &Track, style: Option<u16>, with_controls: bool) {
    push(vocab, ids, Token::TrackStart);
    push(vocab, ids, Token::Instrument(track.program));
    if let Some(s) = style {
        push(vocab, ids, Token::Style(s));
    }
    if !with_controls {
        return;
    }
    let Some(c) = &track.controls else { return };
    if let Some(d) = c.density {
        push(vocab, ids, Token::Density(d));
    }
    if let Some((lo, hi)) = c.poly_range {
        push(vocab, ids, Token::MinPoly(lo));
        push(vocab, ids, Token::MaxPoly(hi));
    }
    if let Some((lo, hi)) = c.dur_range {
        push(vocab, ids, Token::MinDur(lo));
        push(vocab, ids, Token::MaxDur(hi));
    }
}

fn style_of(piece: &Piece, vocab: &Vocab) -> Result<Option<u16>, EncodeError> {
    match &piece.style {
        None => Ok(None),
        Some(label) => vocab.style_index(label).map(Some).ok_or_else(|| EncodeError::UnknownStyle(label.clone())),
    }
}

fn encode(
    piece: &Piece,
    vocab: &Vocab,
    opts: EncodeOptions,
    mask: Option<&BTreeSet<(usize, usize)>>,
) -> Result<TokenSeq, EncodeError> {
    piece.validate()?;
    let style = style_of(piece, vocab)?;
    let mut ids = Vec::new();
    push(vocab, &mut ids, if mask.is_some() { Token::StartFill } else { Token::Start });
    for (ti, track) in piece.tracks.iter().enumerate() {
        encode_track_header(vocab, &mut ids, track, style, opts.with_controls);
        for (bi, bar) in track.bars.iter().enumerate() {
            push(vocab, &mut ids, Token::BarStart);
            if mask.is_some_and(|m| m.contains(&(ti, bi))) {
                push(vocab, &mut ids, Token::FillIn);
            } else {
                encode_bar_body(vocab, &mut ids, bar, opts.expressive);
            }
            push(vocab, &mut ids, Token::BarEnd);
        }
        push(vocab, &mut ids, Token::TrackEnd);
    }
    if let Some(mask) = mask {
        for &(ti, bi) in mask {
            push(vocab, &mut ids, Token::FillStart);
            encode_bar_body(vocab, &mut ids, &piece.tracks[ti].bars[bi], opts.expressive);
            push(vocab, &mut ids, Token::FillEnd);
        }
    }
    Ok(TokenSeq {
        ids,
        mode: if mask.is_some() { Mode::BarFill } else { Mode::MultiTrack },
        expressive: opts.expressive,
        meters: piece.meters(),
    })
}

pub fn encode_multitrack(piece: &Piece, vocab: &Vocab, opts: EncodeOptions) -> Result<TokenSeq, EncodeError> {
    encode(piece, vocab, opts, None)
}

/// Masked bars are listed track-major, then by bar index.
pub fn encode_barfill(
    piece: &Piece,
    vocab: &Vocab,
    mask: &[(usize, usize)],
    opts: EncodeOptions,
) -> Result<TokenSeq, EncodeError> {
    if mask.is_empty() {
        return Err(EncodeError::EmptyMask);
    }
    for &(track, bar) in mask {
        if piece.tracks.get(track).is_none_or(|t| bar >= t.bars.len()) {
            return Err(EncodeError::MaskOutOfRange { track, bar });
        }
    }
    let set: BTreeSet<_> = mask.iter().copied().collect();
    encode(piece, vocab, opts, Some(&set))
}

#[derive(Default)]
struct PendingNote {
    onset: u32,
    micro: i16,
    negative: bool,
    pitch: u8,
    velocity: u8,
}

struct TrackDraft {
    program: Program,
    controls: ControlSpec,
    bars: Vec<Vec<Note>>,
    complete: bool,
}

/// Rebuilds a piece from tokens, driven by the grammar automaton.
struct Builder {
    tracks: Vec<TrackDraft>,
    fills: Vec<(Vec<Note>, bool)>,
    in_fill: bool,
    note: PendingNote,
    style: Option<u16>,
}

impl Builder {
    fn new() -> Self {
        Builder { tracks: Vec::new(), fills: Vec::new(), in_fill: false, note: PendingNote::default(), style: None }
    }

    fn current_bar(&mut self) -> &mut Vec<Note> {
        if self.in_fill {
            &mut self.fills.last_mut().expect("fill open").0
        } else {
            self.tracks.last_mut().and_then(|t| t.bars.last_mut()).expect("bar open")
        }
    }

    fn track(&mut self) -> &mut TrackDraft {
        self.tracks.last_mut().expect("track open")
    }

    fn apply(&mut self, token: Token) {
        use Token::*;
        match token {
            Start | StartFill | FillIn | BarEnd => {}
            TrackStart => self.tracks.push(TrackDraft {
                program: Program::Melodic(0),
                controls: ControlSpec::default(),
                bars: Vec::new(),
                complete: false,
            }),
            Instrument(p) => self.track().program = p,
            Style(s) => {
                self.style.get_or_insert(s);
            }
            Density(l) => self.track().controls.density = Some(l),
            MinPoly(v) => self.track().controls.poly_range = Some((v, v)),
            MaxPoly(v) => {
                if let Some(r) = &mut self.track().controls.poly_range {
                    r.1 = v;
                }
            }
            MinDur(v) => self.track().controls.dur_range = Some((v, v)),
            MaxDur(v) => {
                if let Some(r) = &mut self.track().controls.dur_range {
                    r.1 = v;
                }
            }
            BarStart => self.track().bars.push(Vec::new()),
            TrackEnd => self.track().complete = true,
            FillStart => {
                self.in_fill = true;
                self.fills.push((Vec::new(), false));
            }
            FillEnd => {
                self.in_fill = false;
                if let Some(f) = self.fills.last_mut() {
                    f.1 = true;
                }
            }
            TimePosition(t) => self.note = PendingNote { onset: u32::from(t), ..PendingNote::default() },
            DeltaNeg => self.note.negative = true,
            Delta(d) => self.note.micro = if self.note.negative { -i16::from(d) } else { i16::from(d) },
            NoteOn(p) => {
                self.note.pitch = p;
                self.note.velocity = DEFAULT_VELOCITY;
            }
            Velocity(v) => self.note.velocity = v,
            Duration(d) => {
                let n = Note::new(self.note.pitch, self.note.onset, u32::from(d))
                    .with_expression(self.note.velocity, self.note.micro);
                self.note.micro = 0;
                self.note.negative = false;
                self.current_bar().push(n);
            }
        }
    }

    fn finish(
        self,
        vocab: &Vocab,
        meters: &[TimeSig],
        placeholders: &[(usize, usize)],
        partial: bool,
    ) -> Result<Decoded, ScoreError> {
        let meter = |b: usize| meters.get(b).copied().unwrap_or(TimeSig::FOUR_FOUR);
        let mut drafts = self.tracks;
        let mut mask = Vec::new();
        for (i, &(t, b)) in placeholders.iter().enumerate() {
            if let Some((notes, done)) = self.fills.get(i) {
                if *done || !partial {
                    drafts[t].bars[b] = notes.clone();
                    mask.push((t, b));
                }
            }
        }
        let mut tracks = Vec::new();
        for d in drafts {
            if partial && !d.complete {
                continue;
            }
            let bars = d
                .bars
                .into_iter()
                .enumerate()
                .map(|(b, notes)| Bar::new(meter(b), notes))
                .collect::<Result<Vec<_>, _>>()?;
            let mut track = Track::new(d.program, bars);
            track.controls = (!d.controls.is_empty()).then_some(d.controls);
            tracks.push(track);
        }
        Ok(Decoded {
            piece: Piece {
                tracks,
                ticks_per_quarter: DEFAULT_TPQ,
                style: self.style.map(|s| vocab.styles()[usize::from(s)].clone()),
            },
            mask,
        })
    }
}

fn grammar_for(seq: &TokenSeq) -> GrammarConfig {
    let mut cfg = GrammarConfig::new(seq.mode, seq.expressive, seq.meters.clone());
    if seq.meters.is_empty() {
        cfg.bar_count = None;
    }
    cfg.lenient_positions = true;
    cfg
}

/// Decode a complete sequence. Bar-Fill blocks are merged into their
/// placeholders and the placeholder positions are returned as the mask.
pub fn decode(seq: &TokenSeq, vocab: &Vocab) -> Result<Decoded, DecodeError> {
    let mut grammar = GrammarState::new(grammar_for(seq), vocab);
    let mut builder = Builder::new();
    for (index, &id) in seq.ids.iter().enumerate() {
        let token = grammar.step(vocab, id).map_err(|source| DecodeError::Grammar { index, source })?;
        builder.apply(token);
    }
    if !grammar.is_complete() {
        return Err(DecodeError::Incomplete {
            fills: grammar.fills_started(),
            placeholders: grammar.placeholders().len(),
        });
    }
    let placeholders = grammar.placeholders().to_vec();
    Ok(builder.finish(vocab, &seq.meters, &placeholders, false)?)
}

/// Decode the completed part of a truncated sequence: finished tracks and
/// finished fill blocks. Unfinished fills leave their placeholder bars empty.
pub fn decode_partial(seq: &TokenSeq, vocab: &Vocab) -> Result<Decoded, DecodeError> {
    let mut grammar = GrammarState::new(grammar_for(seq), vocab);
    let mut builder = Builder::new();
    for (index, &id) in seq.ids.iter().enumerate() {
        let token = grammar.step(vocab, id).map_err(|source| DecodeError::Grammar { index, source })?;
        builder.apply(token);
    }
    let placeholders = grammar.placeholders().to_vec();
    Ok(builder.finish(vocab, &seq.meters, &placeholders, true)?)
}
