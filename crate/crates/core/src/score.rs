//! Quantized score model shared by every other module.
//!
//! Time is measured in grid steps of one sixteenth-note triplet, so a whole
//! note spans 48 steps and a 4/4 bar spans 48 steps. Notes belong to the bar
//! that contains their onset and may sustain past its barline.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controls::ControlSpec;

pub const STEPS_PER_WHOLE: u32 = 48;
pub const STEPS_PER_QUARTER: u32 = STEPS_PER_WHOLE / 4;
/// Longest representable bar and note: a double whole note.
pub const MAX_BAR_STEPS: u32 = 96;
pub const MAX_DURATION: u32 = 96;
pub const MICRO_MIN: i16 = -80;
pub const MICRO_MAX: i16 = 79;
pub const DEFAULT_VELOCITY: u8 = 100;
pub const DEFAULT_TPQ: u16 = 480;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScoreError {
    #[error("invalid note {note:?}: {reason}")]
    InvalidNote { note: Note, reason: &'static str },
    #[error("duplicate note at onset {onset} pitch {pitch}")]
    DuplicateNote { onset: u32, pitch: u8 },
    #[error("unsupported meter {numerator}/{denominator} at bar {bar}: {reason}")]
    UnsupportedMeter { bar: usize, numerator: u8, denominator: u8, reason: &'static str },
    #[error("track {track} is not aligned with track 0: {reason}")]
    Misaligned { track: usize, reason: &'static str },
    #[error("{what} {index} out of range (limit {limit})")]
    OutOfRange { what: &'static str, index: usize, limit: usize },
    #[error("empty track selection")]
    EmptySelection,
}

/// MIDI program of a track. Drums are a distinguished value rather than a
/// channel property.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Program {
    Melodic(u8),
    Drum,
}

impl Program {
    pub fn is_drum(self) -> bool {
        matches!(self, Program::Drum)
    }

    /// Stable key used in serialized tables: `"0"`..`"127"` or `"drum"`.
    pub fn key(self) -> String {
        match self {
            Program::Melodic(p) => p.to_string(),
            Program::Drum => "drum".to_string(),
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        if key == "drum" {
            return Some(Program::Drum);
        }
        key.parse::<u8>().ok().filter(|p| *p < 128).map(Program::Melodic)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Program::Melodic(p) => write!(f, "program {p}"),
            Program::Drum => f.write_str("drums"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Note {
    pub pitch: u8,
    /// Steps from the start of the owning bar.
    pub onset: u32,
    pub duration: u32,
    pub velocity: u8,
    /// Microtiming offset in 1/160-step units. Zero unless expressive.
    pub micro: i16,
}

impl Note {
    pub fn new(pitch: u8, onset: u32, duration: u32) -> Self {
        Note { pitch, onset, duration, velocity: DEFAULT_VELOCITY, micro: 0 }
    }

    pub fn with_expression(mut self, velocity: u8, micro: i16) -> Self {
        self.velocity = velocity;
        self.micro = micro;
        self
    }

    fn check(&self, bar_len: u32) -> Result<(), ScoreError> {
        let reason = if self.pitch > 127 {
            "pitch above 127"
        } else if self.onset >= bar_len {
            "onset outside bar"
        } else if self.duration == 0 || self.duration > MAX_DURATION {
            "duration outside 1..=96"
        } else if self.velocity == 0 || self.velocity > 127 {
            "velocity outside 1..=127"
        } else if !(MICRO_MIN..=MICRO_MAX).contains(&self.micro) {
            "microtiming outside -80..=79"
        } else {
            return Ok(());
        };
        Err(ScoreError::InvalidNote { note: *self, reason })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeSig {
    pub numerator: u8,
    pub denominator: u8,
}

impl TimeSig {
    pub const FOUR_FOUR: TimeSig = TimeSig { numerator: 4, denominator: 4 };

    pub fn new(numerator: u8, denominator: u8) -> Self {
        TimeSig { numerator, denominator }
    }

    /// Bar length in steps, or `None` if the meter does not land on the grid.
    pub fn steps(self) -> Option<u32> {
        if self.numerator == 0 || !self.denominator.is_power_of_two() {
            return None;
        }
        let total = u32::from(self.numerator) * STEPS_PER_WHOLE;
        let den = u32::from(self.denominator);
        total.is_multiple_of(den).then_some(total / den)
    }

    pub(crate) fn checked_steps(self, bar: usize) -> Result<u32, ScoreError> {
        let err = |reason| ScoreError::UnsupportedMeter {
            bar,
            numerator: self.numerator,
            denominator: self.denominator,
            reason,
        };
        let steps = self.steps().ok_or_else(|| err("not representable on the step grid"))?;
        if steps > MAX_BAR_STEPS {
            return Err(err("longer than a double whole note"));
        }
        Ok(steps)
    }
}

impl Default for TimeSig {
    fn default() -> Self {
        TimeSig::FOUR_FOUR
    }
}

impl fmt::Display for TimeSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// One measure of one track. Notes are kept sorted by `(onset, pitch)` with
/// no duplicate pairs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bar {
    time_sig: TimeSig,
    notes: Vec<Note>,
}

impl Bar {
    pub fn empty(time_sig: TimeSig) -> Self {
        Bar { time_sig, notes: Vec::new() }
    }

    /// Builds a bar, sorting the notes. Fails on duplicates, notes that do not
    /// fit the bar, or meters longer than 96 steps.
    pub fn new(time_sig: TimeSig, mut notes: Vec<Note>) -> Result<Self, ScoreError> {
        let len = time_sig.checked_steps(0)?;
        for n in &notes {
            n.check(len)?;
        }
        notes.sort_by_key(|n| (n.onset, n.pitch));
        if let Some(w) = notes.windows(2).find(|w| (w[0].onset, w[0].pitch) == (w[1].onset, w[1].pitch)) {
            return Err(ScoreError::DuplicateNote { onset: w[0].onset, pitch: w[0].pitch });
        }
        Ok(Bar { time_sig, notes })
    }

    pub fn time_sig(&self) -> TimeSig {
        self.time_sig
    }

    /// Length in steps. Always valid for a constructed bar.
    pub fn len_steps(&self) -> u32 {
        self.time_sig.steps().unwrap_or(STEPS_PER_WHOLE)
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Track {
    pub program: Program,
    pub bars: Vec<Bar>,
    pub controls: Option<ControlSpec>,
}

impl Track {
    pub fn new(program: Program, bars: Vec<Bar>) -> Self {
        Track { program, bars, controls: None }
    }

    pub fn empty(program: Program, meters: &[TimeSig]) -> Self {
        Track::new(program, meters.iter().map(|ts| Bar::empty(*ts)).collect())
    }

    /// Global start step of every bar.
    pub fn bar_offsets(&self) -> Vec<u32> {
        let mut acc = 0;
        self.bars
            .iter()
            .map(|b| {
                let start = acc;
                acc += b.len_steps();
                start
            })
            .collect()
    }

    /// Total number of steps covered by the bars.
    pub fn extent(&self) -> u32 {
        self.bars.iter().map(Bar::len_steps).sum()
    }

    /// All notes with their global onset step, in bar order.
    pub fn global_notes(&self) -> impl Iterator<Item = (u32, &Note)> + '_ {
        self.bars
            .iter()
            .zip(self.bar_offsets())
            .flat_map(|(bar, start)| bar.notes.iter().map(move |n| (start + n.onset, n)))
    }

    pub fn note_count(&self) -> usize {
        self.bars.iter().map(|b| b.notes.len()).sum()
    }

    /// Number of notes sounding at each step of the track extent, computed
    /// with a difference array. Notes sustaining past the last bar are cut.
    pub fn polyphony_profile(&self) -> Vec<u32> {
        let extent = self.extent() as usize;
        let mut diff = vec![0i64; extent + 1];
        for (start, n) in self.global_notes() {
            let s = start as usize;
            let e = (start + n.duration).min(extent as u32) as usize;
            diff[s] += 1;
            diff[e] -= 1;
        }
        let mut acc = 0i64;
        diff[..extent]
            .iter()
            .map(|d| {
                acc += d;
                acc as u32
            })
            .collect()
    }
}

/// Number of notes `n` on `track` with `onset ≤ step < onset + duration`,
/// measured in global steps (durations may cross barlines).
pub fn polyphony_at(track: &Track, global_step: u32) -> u32 {
    track.global_notes().filter(|(start, n)| *start <= global_step && global_step < start + n.duration).count() as u32
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piece {
    pub tracks: Vec<Track>,
    pub ticks_per_quarter: u16,
    pub style: Option<String>,
}

impl Default for Piece {
    fn default() -> Self {
        Piece { tracks: Vec::new(), ticks_per_quarter: DEFAULT_TPQ, style: None }
    }
}

impl Piece {
    pub fn new(tracks: Vec<Track>) -> Self {
        Piece { tracks, ..Piece::default() }
    }

    pub fn bar_count(&self) -> usize {
        self.tracks.first().map_or(0, |t| t.bars.len())
    }

    /// Per-bar time signatures, taken from the first track.
    pub fn meters(&self) -> Vec<TimeSig> {
        self.tracks.first().map(|t| t.bars.iter().map(Bar::time_sig).collect()).unwrap_or_default()
    }

    pub fn note_count(&self) -> usize {
        self.tracks.iter().map(Track::note_count).sum()
    }

    /// Checks bar alignment across tracks and per-bar note invariants.
    pub fn validate(&self) -> Result<(), ScoreError> {
        let meters = self.meters();
        for (ti, track) in self.tracks.iter().enumerate() {
            if track.bars.len() != meters.len() {
                return Err(ScoreError::Misaligned { track: ti, reason: "bar count differs" });
            }
            for (bi, (bar, ts)) in track.bars.iter().zip(&meters).enumerate() {
                if bar.time_sig != *ts {
                    return Err(ScoreError::Misaligned { track: ti, reason: "time signature differs" });
                }
                let len = bar.time_sig.checked_steps(bi)?;
                for n in &bar.notes {
                    n.check(len)?;
                }
            }
        }
        Ok(())
    }
}

/// Shifts every non-drum pitch by `semitones`. Notes pushed outside 0..=127
/// are dropped; drum tracks are left untouched.
pub fn transpose(piece: &Piece, semitones: i32) -> Piece {
    let mut out = piece.clone();
    if semitones == 0 {
        return out;
    }
    for track in out.tracks.iter_mut().filter(|t| !t.program.is_drum()) {
        for bar in &mut track.bars {
            bar.notes.retain_mut(|n| {
                let p = i32::from(n.pitch) + semitones;
                if (0..=127).contains(&p) {
                    n.pitch = p as u8;
                    true
                } else {
                    false
                }
            });
        }
    }
    out
}

/// Restricts `piece` to `n_bars` bars starting at `start_bar` and to the
/// tracks listed in `track_indices`, in that order.
pub fn slice_segment(
    piece: &Piece,
    start_bar: usize,
    n_bars: usize,
    track_indices: &[usize],
) -> Result<Piece, ScoreError> {
    if track_indices.is_empty() {
        return Err(ScoreError::EmptySelection);
    }
    let bar_count = piece.bar_count();
    if n_bars == 0 || start_bar + n_bars > bar_count {
        return Err(ScoreError::OutOfRange { what: "bar", index: start_bar + n_bars, limit: bar_count });
    }
    let tracks = track_indices
        .iter()
        .map(|&ti| {
            let track = piece.tracks.get(ti).ok_or(ScoreError::OutOfRange {
                what: "track",
                index: ti,
                limit: piece.tracks.len(),
            })?;
            Ok(Track {
                program: track.program,
                bars: track.bars[start_bar..start_bar + n_bars].to_vec(),
                controls: track.controls.clone(),
            })
        })
        .collect::<Result<Vec<_>, ScoreError>>()?;
    Ok(Piece { tracks, ticks_per_quarter: piece.ticks_per_quarter, style: piece.style.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(notes: &[(u8, u32, u32)]) -> Bar {
        Bar::new(TimeSig::FOUR_FOUR, notes.iter().map(|&(p, o, d)| Note::new(p, o, d)).collect()).unwrap()
    }

    fn two_bar_piece() -> Piece {
        Piece::new(vec![
            Track::new(Program::Melodic(0), vec![bar(&[(60, 0, 12), (64, 12, 12)]), bar(&[(67, 0, 48)])]),
            Track::new(Program::Drum, vec![bar(&[(36, 0, 1)]), bar(&[(38, 24, 1)])]),
            Track::new(Program::Melodic(33), vec![bar(&[(40, 0, 60)]), bar(&[])]),
        ])
    }

    #[test]
    fn meter_lengths() {
        assert_eq!(TimeSig::new(4, 4).steps(), Some(48));
        assert_eq!(TimeSig::new(3, 4).steps(), Some(36));
        assert_eq!(TimeSig::new(6, 8).steps(), Some(36));
        assert_eq!(TimeSig::new(5, 16).steps(), Some(15));
        assert_eq!(TimeSig::new(8, 4).steps(), Some(96));
        assert_eq!(TimeSig::new(3, 3).steps(), None);
        assert!(TimeSig::new(9, 4).checked_steps(3).is_err());
    }

    #[test]
    fn bar_sorts_and_rejects_duplicates() {
        let b = bar(&[(64, 4, 1), (60, 4, 1), (50, 0, 2)]);
        let keys: Vec<_> = b.notes().iter().map(|n| (n.onset, n.pitch)).collect();
        assert_eq!(keys, vec![(0, 50), (4, 60), (4, 64)]);
        let dup = Bar::new(TimeSig::FOUR_FOUR, vec![Note::new(60, 0, 1), Note::new(60, 0, 3)]);
        assert_eq!(dup, Err(ScoreError::DuplicateNote { onset: 0, pitch: 60 }));
        assert!(Bar::new(TimeSig::FOUR_FOUR, vec![Note::new(60, 48, 1)]).is_err());
        assert!(Bar::new(TimeSig::FOUR_FOUR, vec![Note::new(60, 0, 97)]).is_err());
    }

    #[test]
    fn transpose_shifts_melodic_and_spares_drums() {
        let p = two_bar_piece();
        assert_eq!(transpose(&p, 0), p);
        let up = transpose(&p, 5);
        assert_eq!(up.tracks[0].bars[0].notes()[0].pitch, 65);
        assert_eq!(up.tracks[1], p.tracks[1]);
        let down = transpose(&p, -6);
        assert_eq!(down.tracks[1].bars[0].notes()[0].pitch, 36);
        assert_eq!(transpose(&up, -5), p);
    }

    #[test]
    fn transpose_drops_out_of_range_notes() {
        let p = Piece::new(vec![Track::new(Program::Melodic(0), vec![bar(&[(125, 0, 1), (60, 1, 1)])])]);
        let up = transpose(&p, 5);
        assert_eq!(up.tracks[0].bars[0].notes().len(), 1);
        assert_eq!(up.tracks[0].bars[0].notes()[0].pitch, 65);
    }

    #[test]
    fn slice_full_range_is_identity() {
        let p = two_bar_piece();
        let s = slice_segment(&p, 0, 2, &[0, 1, 2]).unwrap();
        assert_eq!(s, p);
        assert_eq!(slice_segment(&s, 0, 2, &[0, 1, 2]).unwrap(), s);
    }

    #[test]
    fn slice_counts_and_errors() {
        let meters = vec![TimeSig::FOUR_FOUR; 8];
        let p = Piece::new((0..4).map(|i| Track::empty(Program::Melodic(i), &meters)).collect());
        let s = slice_segment(&p, 4, 4, &[0, 2]).unwrap();
        assert_eq!((s.tracks.len(), s.bar_count()), (2, 4));
        assert_eq!(s.tracks[1].program, Program::Melodic(2));
        assert!(slice_segment(&p, 5, 4, &[0]).is_err());
        assert!(slice_segment(&p, 0, 4, &[4]).is_err());
        assert_eq!(slice_segment(&p, 0, 4, &[]), Err(ScoreError::EmptySelection));
    }

    #[test]
    fn slice_matches_manual_extraction() {
        let p = two_bar_piece();
        let s = slice_segment(&p, 1, 1, &[2, 0]).unwrap();
        assert_eq!(s.tracks[0].program, Program::Melodic(33));
        assert!(s.tracks[0].bars[0].is_empty());
        assert_eq!(s.tracks[1].bars[0].notes(), &[Note::new(67, 0, 48)]);
    }

    #[test]
    fn polyphony_half_open() {
        let empty = Track::empty(Program::Melodic(0), &[TimeSig::FOUR_FOUR]);
        assert!((0..48).all(|s| polyphony_at(&empty, s) == 0));
        let t = Track::new(Program::Melodic(0), vec![bar(&[(60, 0, 4)])]);
        assert!((0..4).all(|s| polyphony_at(&t, s) == 1));
        assert_eq!(polyphony_at(&t, 4), 0);
    }

    #[test]
    fn polyphony_crosses_barlines() {
        let p = two_bar_piece();
        let bass = &p.tracks[2];
        assert_eq!(polyphony_at(bass, 59), 1);
        assert_eq!(polyphony_at(bass, 60), 0);
        assert_eq!(bass.polyphony_profile()[59], 1);
    }

    #[test]
    fn profile_matches_stabbing_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut notes = Vec::new();
            while notes.len() < 20 {
                let n = Note::new(rng.random_range(30..90), rng.random_range(0..48), rng.random_range(1..40));
                if !notes.iter().any(|m: &Note| (m.onset, m.pitch) == (n.onset, n.pitch)) {
                    notes.push(n);
                }
            }
            let t = Track::new(
                Program::Melodic(0),
                vec![Bar::new(TimeSig::FOUR_FOUR, notes.clone()).unwrap(), Bar::empty(TimeSig::FOUR_FOUR)],
            );
            let profile = t.polyphony_profile();
            for step in 0..t.extent() {
                let oracle = notes.iter().filter(|n| n.onset <= step && step < n.onset + n.duration).count() as u32;
                assert_eq!(polyphony_at(&t, step), oracle);
                assert_eq!(profile[step as usize], oracle);
            }
            let total: u32 = profile.iter().sum();
            assert_eq!(total, notes.iter().map(|n| n.duration).sum::<u32>());
        }
    }

    #[test]
    fn validate_catches_misalignment() {
        let mut p = two_bar_piece();
        assert!(p.validate().is_ok());
        p.tracks[1].bars.pop();
        assert!(matches!(p.validate(), Err(ScoreError::Misaligned { track: 1, .. })));
    }
}
