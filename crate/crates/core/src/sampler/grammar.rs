//! Token grammar as a deterministic automaton.
//!
//! The same state machine drives masked sampling and validates sequences
//! during decoding, so anything the sampler can emit is decodable.

use thiserror::Error;

use crate::score::{TimeSig, MAX_DURATION, STEPS_PER_WHOLE};
use crate::tokenizer::vocab::{ids, Token, Vocab};
use crate::tokenizer::Mode;

/// Bitset over token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMask {
    words: Vec<u64>,
    len: usize,
}

impl TokenMask {
    pub fn none(len: usize) -> Self {
        TokenMask { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn allow(&mut self, id: u32) {
        let i = id as usize;
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn allow_range(&mut self, start: u32, end: u32) {
        for id in start..end {
            self.allow(id);
        }
    }

    pub fn deny(&mut self, id: u32) {
        let i = id as usize;
        if i < self.len {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn is_allowed(&self, id: u32) -> bool {
        let i = id as usize;
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros();
                bits &= bits - 1;
                Some(wi as u32 * 64 + b)
            })
        })
    }

    pub fn retain(&mut self, mut keep: impl FnMut(u32) -> bool) {
        let denied: Vec<u32> = self.iter().filter(|&id| !keep(id)).collect();
        for id in denied {
            self.deny(id);
        }
    }
}

#[derive(Clone, Debug)]
pub struct GrammarConfig {
    pub mode: Mode,
    pub expressive: bool,
    /// Meter of each bar; bars past the end default to 4/4.
    pub meters: Vec<TimeSig>,
    /// Exact number of bars per track. Unknown means the first track fixes it.
    pub bar_count: Option<usize>,
    /// Maximum number of TRACK_START tokens.
    pub track_limit: Option<usize>,
    /// Hard cap on simultaneously sounding notes within a track.
    pub poly_limit: Option<u32>,
    /// Accept a repeated TIME_POSITION equal to the current onset.
    pub lenient_positions: bool,
}

impl GrammarConfig {
    pub fn new(mode: Mode, expressive: bool, meters: Vec<TimeSig>) -> Self {
        GrammarConfig {
            mode,
            expressive,
            bar_count: Some(meters.len()),
            meters,
            track_limit: None,
            poly_limit: None,
            lenient_positions: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("{token} is not admissible in phase {phase:?}")]
    NotAdmissible { token: String, phase: Phase },
}

/// Where the automaton is within the token layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Nothing consumed yet.
    Begin,
    /// Between tracks or fill blocks.
    Between,
    ExpectInstrument,
    /// After INSTRUMENT, while optional style and control tokens may follow.
    Controls,
    /// After BAR_END: next bar or TRACK_END.
    BarBoundary,
    /// At the start of a bar or fill body.
    BarOpen,
    /// After FILL_IN, which must be closed by BAR_END.
    Placeholder,
    AfterPosition,
    AfterDeltaNeg,
    AfterDelta,
    AfterNoteOn,
    AfterVelocity,
    AfterDuration,
}

// Control slots in their fixed order.
const SLOT_STYLE: u8 = 0;
const SLOT_DENSITY: u8 = 1;
const SLOT_MIN_POLY: u8 = 2;
const SLOT_MAX_POLY: u8 = 3;
const SLOT_MIN_DUR: u8 = 4;
const SLOT_MAX_DUR: u8 = 5;
const SLOT_DONE: u8 = 6;

#[derive(Clone, Debug)]
pub struct GrammarState {
    cfg: GrammarConfig,
    vocab_size: usize,
    style_count: usize,
    offsets: Vec<u32>,
    phase: Phase,
    bar_count: Option<usize>,
    tracks: usize,
    bar: usize,
    in_fill: bool,
    placeholders: Vec<(usize, usize)>,
    fills_started: usize,
    slot: u8,
    pending_min: u8,
    onset: Option<u8>,
    pitches_here: u128,
    /// Sounding intervals `[start, end)` in global steps, per track.
    ledger: Vec<Vec<(u32, u32)>>,
    consumed: usize,
}

fn bar_steps(meters: &[TimeSig], bar: usize) -> u32 {
    meters.get(bar).and_then(|m| m.steps()).unwrap_or(STEPS_PER_WHOLE)
}

impl GrammarState {
    pub fn new(cfg: GrammarConfig, vocab: &Vocab) -> Self {
        let mut offsets = Vec::with_capacity(cfg.meters.len() + 1);
        let mut acc = 0;
        for b in 0..=cfg.meters.len() {
            offsets.push(acc);
            acc += bar_steps(&cfg.meters, b);
        }
        GrammarState {
            bar_count: cfg.bar_count,
            cfg,
            vocab_size: vocab.size(),
            style_count: vocab.styles().len(),
            offsets,
            phase: Phase::Begin,
            tracks: 0,
            bar: 0,
            in_fill: false,
            placeholders: Vec::new(),
            fills_started: 0,
            slot: 0,
            pending_min: 0,
            onset: None,
            pitches_here: 0,
            ledger: Vec::new(),
            consumed: 0,
        }
    }

    pub fn config(&self) -> &GrammarConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn tokens_consumed(&self) -> usize {
        self.consumed
    }

    pub fn tracks_started(&self) -> usize {
        self.tracks
    }

    pub fn bars_in_track(&self) -> usize {
        self.bar
    }

    pub fn bar_count(&self) -> Option<usize> {
        self.bar_count
    }

    pub fn placeholders(&self) -> &[(usize, usize)] {
        &self.placeholders
    }

    pub fn fills_started(&self) -> usize {
        self.fills_started
    }

    /// Index of the next control slot after INSTRUMENT.
    pub fn control_slot(&self) -> Option<u8> {
        (self.phase == Phase::Controls).then_some(self.slot)
    }

    /// The sequence forms a complete piece at this point.
    pub fn is_complete(&self) -> bool {
        self.phase == Phase::Between && self.fills_started == self.placeholders.len()
    }

    /// Complete and no further token is admissible.
    pub fn is_done(&self) -> bool {
        self.is_complete() && self.valid_next().is_empty()
    }

    /// The bar being written: (track, bar index).
    fn context(&self) -> (usize, usize) {
        if self.in_fill {
            self.placeholders[self.fills_started - 1]
        } else {
            (self.tracks - 1, self.bar)
        }
    }

    fn offset(&self, bar: usize) -> u32 {
        match self.offsets.get(bar) {
            Some(&o) => o,
            None => {
                let last = self.offsets.len() - 1;
                self.offsets[last] + (bar - last) as u32 * STEPS_PER_WHOLE
            }
        }
    }

    fn current_len(&self) -> u32 {
        bar_steps(&self.cfg.meters, self.context().1)
    }

    fn global(&self, pos: u8) -> u32 {
        self.offset(self.context().1) + u32::from(pos)
    }

    fn sounding(&self, at: u32) -> u32 {
        let track = self.context().0;
        self.ledger[track].iter().filter(|&&(s, e)| s <= at && at < e).count() as u32
    }

    fn position_open(&self, pos: u8) -> bool {
        match self.cfg.poly_limit {
            Some(limit) => self.sounding(self.global(pos)) < limit,
            None => true,
        }
    }

    fn note_possible(&self) -> bool {
        self.pitches_here != u128::MAX && self.onset.is_some_and(|t| self.position_open(t))
    }

    /// Longest admissible duration for a note starting at the current onset.
    fn max_duration(&self) -> u32 {
        let Some(limit) = self.cfg.poly_limit else {
            return MAX_DURATION;
        };
        let start = self.global(self.onset.unwrap_or(0));
        let mut counts = [0u32; MAX_DURATION as usize];
        for &(s, e) in &self.ledger[self.context().0] {
            let lo = s.max(start);
            let hi = e.min(start + MAX_DURATION);
            for at in lo..hi {
                counts[(at - start) as usize] += 1;
            }
        }
        counts.iter().position(|&c| c >= limit).map_or(MAX_DURATION, |i| i as u32).max(1)
    }

    fn allow_bar_boundary(&self, mask: &mut TokenMask) {
        match self.bar_count {
            Some(n) if self.bar < n => mask.allow(ids::BAR_START),
            Some(_) => mask.allow(ids::TRACK_END),
            None => {
                mask.allow(ids::BAR_START);
                mask.allow(ids::TRACK_END);
            }
        }
    }

    fn allow_positions(&self, mask: &mut TokenMask, repeat_ok: bool) {
        let lo = match self.onset {
            None => 0,
            Some(t) if repeat_ok => t,
            Some(t) => t + 1,
        };
        let len = self.current_len().min(96) as u8;
        for t in lo..len {
            if Some(t) == self.onset && !self.note_possible() {
                continue;
            }
            if self.position_open(t) {
                mask.allow(ids::TIME_POSITION + u32::from(t));
            }
        }
    }

    fn allow_note_start(&self, mask: &mut TokenMask) {
        if self.cfg.expressive {
            mask.allow(ids::DELTA_NEG);
            mask.allow_range(ids::DELTA, ids::DELTA + 79);
        }
        self.allow_pitches(mask);
    }

    fn allow_pitches(&self, mask: &mut TokenMask) {
        for p in 0..128u32 {
            if self.pitches_here & (1 << p) == 0 {
                mask.allow(ids::NOTE_ON + p);
            }
        }
    }

    fn allow_durations(&self, mask: &mut TokenMask) {
        mask.allow_range(ids::DURATION, ids::DURATION + self.max_duration());
    }

    fn close_token(&self) -> u32 {
        if self.in_fill {
            ids::FILL_END
        } else {
            ids::BAR_END
        }
    }

    /// Tokens admissible in the current state.
    pub fn valid_next(&self) -> TokenMask {
        let mut mask = TokenMask::none(self.vocab_size);
        match self.phase {
            Phase::Begin => mask.allow(match self.cfg.mode {
                Mode::MultiTrack => ids::START,
                Mode::BarFill => ids::START_FILL,
            }),
            Phase::Between => {
                let under_limit = self.cfg.track_limit.is_none_or(|n| self.tracks < n);
                if self.fills_started == 0 && under_limit {
                    mask.allow(ids::TRACK_START);
                }
                if self.cfg.mode == Mode::BarFill && self.fills_started < self.placeholders.len() {
                    mask.allow(ids::FILL_START);
                }
            }
            Phase::ExpectInstrument => mask.allow_range(ids::INSTRUMENT, ids::INSTRUMENT + 129),
            Phase::Controls => match self.slot {
                SLOT_MAX_POLY => mask.allow_range(ids::MAX_POLY + u32::from(self.pending_min) - 1, ids::MAX_POLY + 16),
                SLOT_MAX_DUR => mask.allow_range(ids::MAX_DUR + u32::from(self.pending_min), ids::MAX_DUR + 5),
                slot => {
                    if slot == SLOT_STYLE && self.style_count > 0 {
                        mask.allow_range(ids::STYLE, ids::STYLE + self.style_count as u32);
                    }
                    if slot <= SLOT_DENSITY {
                        mask.allow_range(ids::DENSITY, ids::DENSITY + 10);
                    }
                    if slot <= SLOT_MIN_POLY {
                        mask.allow_range(ids::MIN_POLY, ids::MIN_POLY + 16);
                    }
                    if slot <= SLOT_MIN_DUR {
                        mask.allow_range(ids::MIN_DUR, ids::MIN_DUR + 5);
                    }
                    self.allow_bar_boundary(&mut mask);
                }
            },
            Phase::BarBoundary => self.allow_bar_boundary(&mut mask),
            Phase::BarOpen => {
                self.allow_positions(&mut mask, false);
                mask.allow(self.close_token());
                if self.cfg.mode == Mode::BarFill && !self.in_fill {
                    mask.allow(ids::FILL_IN);
                }
            }
            Phase::Placeholder => mask.allow(ids::BAR_END),
            Phase::AfterPosition => self.allow_note_start(&mut mask),
            Phase::AfterDeltaNeg => mask.allow_range(ids::DELTA, ids::DELTA + 80),
            Phase::AfterDelta => self.allow_pitches(&mut mask),
            Phase::AfterNoteOn => {
                if self.cfg.expressive {
                    mask.allow_range(ids::VELOCITY + 1, ids::VELOCITY + 128);
                } else {
                    self.allow_durations(&mut mask);
                }
            }
            Phase::AfterVelocity => self.allow_durations(&mut mask),
            Phase::AfterDuration => {
                if self.note_possible() {
                    self.allow_note_start(&mut mask);
                }
                self.allow_positions(&mut mask, self.cfg.lenient_positions);
                mask.allow(self.close_token());
            }
        }
        mask
    }

    /// Advance by one token after checking admissibility.
    pub fn step(&mut self, vocab: &Vocab, id: u32) -> Result<Token, GrammarError> {
        let token = vocab.token(id).ok_or(GrammarError::UnknownId(id))?;
        if !self.valid_next().is_allowed(id) {
            return Err(GrammarError::NotAdmissible { token: vocab.display(id), phase: self.phase });
        }
        self.apply(token);
        Ok(token)
    }

    /// Advance by a token already known to be admissible.
    pub fn apply(&mut self, token: Token) {
        use Token::*;
        self.consumed += 1;
        self.phase = match token {
            Start | StartFill => Phase::Between,
            TrackStart => {
                self.tracks += 1;
                self.ledger.push(Vec::new());
                self.bar = 0;
                Phase::ExpectInstrument
            }
            Instrument(_) => {
                self.slot = 0;
                Phase::Controls
            }
            Style(_) => {
                self.slot = SLOT_DENSITY;
                Phase::Controls
            }
            Density(_) => {
                self.slot = SLOT_MIN_POLY;
                Phase::Controls
            }
            MinPoly(v) => {
                self.slot = SLOT_MAX_POLY;
                self.pending_min = v;
                Phase::Controls
            }
            MaxPoly(_) => {
                self.slot = SLOT_MIN_DUR;
                Phase::Controls
            }
            MinDur(v) => {
                self.slot = SLOT_MAX_DUR;
                self.pending_min = v;
                Phase::Controls
            }
            MaxDur(_) => {
                self.slot = SLOT_DONE;
                Phase::Controls
            }
            BarStart => {
                self.in_fill = false;
                self.onset = None;
                self.pitches_here = 0;
                Phase::BarOpen
            }
            FillIn => {
                self.placeholders.push((self.tracks - 1, self.bar));
                Phase::Placeholder
            }
            BarEnd => {
                self.bar += 1;
                Phase::BarBoundary
            }
            TrackEnd => {
                if self.bar_count.is_none() {
                    self.bar_count = Some(self.bar);
                }
                Phase::Between
            }
            FillStart => {
                self.fills_started += 1;
                self.in_fill = true;
                self.onset = None;
                self.pitches_here = 0;
                Phase::BarOpen
            }
            FillEnd => {
                self.in_fill = false;
                Phase::Between
            }
            TimePosition(t) => {
                if self.onset != Some(t) {
                    self.pitches_here = 0;
                }
                self.onset = Some(t);
                Phase::AfterPosition
            }
            DeltaNeg => Phase::AfterDeltaNeg,
            Delta(_) => Phase::AfterDelta,
            NoteOn(p) => {
                self.pitches_here |= 1 << p;
                Phase::AfterNoteOn
            }
            Velocity(_) => Phase::AfterVelocity,
            Duration(d) => {
                let start = self.global(self.onset.unwrap_or(0));
                let track = self.context().0;
                self.ledger[track].push((start, start + u32::from(d)));
                Phase::AfterDuration
            }
        };
    }

    /// Notes sounding at the current onset of the bar being written.
    pub fn sounding_now(&self) -> u32 {
        self.onset.map_or(0, |t| self.sounding(self.global(t)))
    }
}
