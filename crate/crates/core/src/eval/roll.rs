//! Boolean piano rolls and the distances between them.

use std::ops::Range;

use thiserror::Error;

use crate::score::{Piece, Track, STEPS_PER_WHOLE};

pub const PITCHES: usize = 128;
/// Pitch columns kept by compression, `[21, 109)`.
pub const KEEP_PITCHES: Range<usize> = 21..109;
pub const COMPRESS_GROUP: usize = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RollError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),
    #[error("bar range {start}..{end} exceeds {bars} bars")]
    Range { start: usize, end: usize, bars: usize },
}

/// Row-major bit matrix with each row padded to whole words.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

pub type PianoRoll = BoolMatrix;
pub type CompressedBarRoll = BoolMatrix;

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        let stride = cols.div_ceil(64);
        BoolMatrix { rows, cols, stride, data: vec![0; rows * stride] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(r < self.rows && c < self.cols);
        self.data[r * self.stride + c / 64] >> (c % 64) & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        assert!(r < self.rows && c < self.cols);
        let w = &mut self.data[r * self.stride + c / 64];
        if v {
            *w |= 1 << (c % 64);
        } else {
            *w &= !(1 << (c % 64));
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.data.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn row_count(&self, r: usize) -> u32 {
        self.data[r * self.stride..(r + 1) * self.stride].iter().map(|w| w.count_ones()).sum()
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Words in row-major order, for persistence.
    pub fn words(&self) -> &[u64] {
        &self.data
    }

    pub fn from_words(rows: usize, cols: usize, data: Vec<u64>) -> Option<Self> {
        let m = BoolMatrix::new(rows, cols);
        if data.len() != m.data.len() {
            return None;
        }
        let out = BoolMatrix { data, ..m };
        // Padding bits must stay clear for popcount arithmetic.
        let tail = cols % 64;
        if tail != 0 && rows > 0 {
            let pad = !((1u64 << tail) - 1);
            if (0..rows).any(|r| out.data[r * out.stride + out.stride - 1] & pad != 0) {
                return None;
            }
        }
        Some(out)
    }

    fn check_shape(&self, other: &BoolMatrix) -> Result<(), RollError> {
        if self.shape() != other.shape() {
            return Err(RollError::Shape(self.shape(), other.shape()));
        }
        Ok(())
    }
}

/// Roll over a range of bars; notes carried over from earlier bars count.
pub fn piano_roll(track: &Track, bars: Range<usize>) -> Result<PianoRoll, RollError> {
    roll_impl(track, bars, true)
}

/// Roll of only the notes whose onset lies in the bar range.
pub fn onset_roll(track: &Track, bars: Range<usize>) -> Result<PianoRoll, RollError> {
    roll_impl(track, bars, false)
}

fn roll_impl(track: &Track, bars: Range<usize>, carry: bool) -> Result<PianoRoll, RollError> {
    if bars.start > bars.end || bars.end > track.bars.len() {
        return Err(RollError::Range { start: bars.start, end: bars.end, bars: track.bars.len() });
    }
    let offsets = track.bar_offsets();
    let start = offsets.get(bars.start).copied().unwrap_or(track.extent());
    let end = if bars.end < track.bars.len() { offsets[bars.end] } else { track.extent() };
    let mut roll = BoolMatrix::new((end - start) as usize, PITCHES);
    for (on, n) in track.global_notes() {
        if !carry && on < start {
            continue;
        }
        let lo = on.max(start);
        let hi = (on + n.duration).min(end);
        for t in lo..hi {
            roll.set((t - start) as usize, usize::from(n.pitch), true);
        }
    }
    Ok(roll)
}

/// Single-bar roll, or `None` when the bar is not 48 steps long.
pub fn bar_roll(track: &Track, bar: usize) -> Option<PianoRoll> {
    (track.bars.get(bar)?.len_steps() == STEPS_PER_WHOLE)
        .then(|| piano_roll(track, bar..bar + 1).expect("bar in range"))
}

/// Fraction of differing cells.
pub fn hamming(a: &BoolMatrix, b: &BoolMatrix) -> Result<f64, RollError> {
    a.check_shape(b)?;
    if a.cells() == 0 {
        return Ok(0.0);
    }
    let diff: u64 = a.data.iter().zip(&b.data).map(|(x, y)| u64::from((x ^ y).count_ones())).sum();
    Ok(diff as f64 / a.cells() as f64)
}

/// Intersection over union of true cells; two empty rolls score 1.
pub fn jaccard(a: &BoolMatrix, b: &BoolMatrix) -> Result<f64, RollError> {
    a.check_shape(b)?;
    let (mut inter, mut union) = (0u64, 0u64);
    for (x, y) in a.data.iter().zip(&b.data) {
        inter += u64::from((x & y).count_ones());
        union += u64::from((x | y).count_ones());
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Jaccard index over the stacked onset rolls of the given bars of two
/// pieces with the same layout.
pub fn masked_jaccard(a: &Piece, b: &Piece, mask: &[(usize, usize)]) -> Result<f64, RollError> {
    let (mut inter, mut union) = (0u64, 0u64);
    for &(t, bar) in mask {
        let (ta, tb) = match (a.tracks.get(t), b.tracks.get(t)) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(RollError::Range { start: bar, end: bar + 1, bars: 0 });
            }
        };
        let ra = onset_roll(ta, bar..bar + 1)?;
        let rb = onset_roll(tb, bar..bar + 1)?;
        ra.check_shape(&rb)?;
        for (x, y) in ra.data.iter().zip(&rb.data) {
            inter += u64::from((x & y).count_ones());
            union += u64::from((x | y).count_ones());
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Crop to 88 pitches and OR-reduce groups of 6 steps: 48×128 → 8×88.
pub fn compress_bar_roll(x: &PianoRoll) -> Result<CompressedBarRoll, RollError> {
    let want = (STEPS_PER_WHOLE as usize, PITCHES);
    if x.shape() != want {
        return Err(RollError::Shape(x.shape(), want));
    }
    let rows = want.0 / COMPRESS_GROUP;
    let mut out = BoolMatrix::new(rows, KEEP_PITCHES.len());
    for t in 0..want.0 {
        for p in KEEP_PITCHES {
            if x.get(t, p) {
                out.set(t / COMPRESS_GROUP, p - KEEP_PITCHES.start, true);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{polyphony_at, Bar, Note, Program, TimeSig};

    fn track(notes: Vec<Note>) -> Track {
        Track::new(Program::Melodic(0), vec![Bar::new(TimeSig::FOUR_FOUR, notes).unwrap()])
    }

    #[test]
    fn empty_bar_roll_is_false() {
        let r = piano_roll(&track(vec![]), 0..1).unwrap();
        assert_eq!(r.shape(), (48, 128));
        assert_eq!(r.count_ones(), 0);
    }

    #[test]
    fn column_sums_match_polyphony() {
        let t = track(vec![Note::new(60, 0, 10), Note::new(64, 4, 4), Note::new(67, 4, 40)]);
        let r = piano_roll(&t, 0..1).unwrap();
        for s in 0..48 {
            assert_eq!(r.row_count(s), polyphony_at(&t, s as u32));
        }
    }

    #[test]
    fn spillover_from_previous_bar_counts() {
        let bars =
            vec![Bar::new(TimeSig::FOUR_FOUR, vec![Note::new(60, 40, 16)]).unwrap(), Bar::empty(TimeSig::FOUR_FOUR)];
        let t = Track::new(Program::Melodic(0), bars);
        let r = piano_roll(&t, 1..2).unwrap();
        assert_eq!(r.count_ones(), 8);
        assert!(r.get(7, 60) && !r.get(8, 60));
    }

    #[test]
    fn onset_roll_skips_carried_notes() {
        let bars = vec![
            Bar::new(TimeSig::FOUR_FOUR, vec![Note::new(60, 40, 16)]).unwrap(),
            Bar::new(TimeSig::FOUR_FOUR, vec![Note::new(62, 0, 96)]).unwrap(),
            Bar::empty(TimeSig::FOUR_FOUR),
        ];
        let t = Track::new(Program::Melodic(0), bars);
        let r = onset_roll(&t, 1..2).unwrap();
        assert_eq!(r.count_ones(), 48);
        assert!(!r.get(0, 60));
        let p = crate::score::Piece::new(vec![t.clone()]);
        let mut q = p.clone();
        q.tracks[0].bars[1] = Bar::empty(TimeSig::FOUR_FOUR);
        assert_eq!(masked_jaccard(&p, &p, &[(0, 1)]).unwrap(), 1.0);
        assert_eq!(masked_jaccard(&p, &q, &[(0, 1)]).unwrap(), 0.0);
        assert_eq!(masked_jaccard(&p, &q, &[(0, 2)]).unwrap(), 1.0);
    }

    #[test]
    fn hamming_examples() {
        let a = BoolMatrix::new(48, 128);
        let mut b = a.clone();
        assert_eq!(hamming(&a, &b).unwrap(), 0.0);
        b.set(3, 77, true);
        assert_eq!(hamming(&a, &b).unwrap(), 1.0 / 6144.0);
        let mut c = BoolMatrix::new(48, 128);
        for r in 0..48 {
            for p in 0..128 {
                c.set(r, p, true);
            }
        }
        assert_eq!(hamming(&a, &c).unwrap(), 1.0);
        assert!(hamming(&a, &BoolMatrix::new(8, 88)).is_err());
    }

    #[test]
    fn jaccard_examples() {
        let mut a = BoolMatrix::new(4, 128);
        let mut b = BoolMatrix::new(4, 128);
        assert_eq!(jaccard(&a, &b).unwrap(), 1.0);
        a.set(0, 1, true);
        b.set(1, 2, true);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        b.set(0, 1, true);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.5);
        assert_eq!(jaccard(&b, &b).unwrap(), 1.0);
    }

    #[test]
    fn compress_examples() {
        let r = piano_roll(&track(vec![Note::new(60, 0, 1)]), 0..1).unwrap();
        let c = compress_bar_roll(&r).unwrap();
        assert_eq!(c.shape(), (8, 88));
        assert_eq!(c.count_ones(), 1);
        assert!(c.get(0, 39));

        let r = piano_roll(&track(vec![Note::new(20, 0, 48), Note::new(109, 0, 48)]), 0..1).unwrap();
        assert_eq!(compress_bar_roll(&r).unwrap().count_ones(), 0);
        assert!(compress_bar_roll(&BoolMatrix::new(36, 128)).is_err());
    }

    #[test]
    fn compress_matches_brute_force() {
        let t = track(vec![Note::new(21, 5, 2), Note::new(108, 11, 30), Note::new(50, 47, 1)]);
        let r = piano_roll(&t, 0..1).unwrap();
        let c = compress_bar_roll(&r).unwrap();
        for g in 0..8 {
            for k in 0..88 {
                let want = (g * 6..g * 6 + 6).any(|s| r.get(s, k + 21));
                assert_eq!(c.get(g, k), want);
            }
        }
    }

    #[test]
    fn from_words_rejects_dirty_padding() {
        let m = BoolMatrix::new(2, 88);
        assert_eq!(BoolMatrix::from_words(2, 88, m.words().to_vec()), Some(m));
        assert_eq!(BoolMatrix::from_words(2, 88, vec![0, u64::MAX, 0, 0]), None);
    }
}
