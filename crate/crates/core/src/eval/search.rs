//! Nearest-neighbour search of single-bar rolls over a corpus index, with a
//! compressed-roll prefilter.

use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use super::roll::{bar_roll, compress_bar_roll, hamming, BoolMatrix, CompressedBarRoll, PianoRoll, PITCHES};
use crate::score::{Piece, STEPS_PER_WHOLE};

pub const DEFAULT_PREFILTER: f64 = 0.25;

const MAGIC: &[u8; 4] = b"TFCI";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("corpus index is empty")]
    EmptyIndex,
    #[error("excerpt bar {0} is not a 48-step bar roll")]
    BarShape(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed index file: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub compressed: CompressedBarRoll,
    pub full: PianoRoll,
    pub source: String,
    pub track: u32,
    pub bar: u32,
}

/// Every 48-step bar of every track of a corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusIndex {
    entries: Vec<IndexEntry>,
}

impl CorpusIndex {
    pub fn build<'a>(pieces: impl IntoIterator<Item = (&'a str, &'a Piece)>) -> Self {
        let mut entries = Vec::new();
        for (source, piece) in pieces {
            for (ti, track) in piece.tracks.iter().enumerate() {
                for bi in 0..track.bars.len() {
                    if let Some(full) = bar_roll(track, bi) {
                        entries.push(IndexEntry {
                            compressed: compress_bar_roll(&full).expect("48-step roll"),
                            full,
                            source: source.to_string(),
                            track: ti as u32,
                            bar: bi as u32,
                        });
                    }
                }
            }
        }
        CorpusIndex { entries }
    }

    pub fn from_rolls(rolls: Vec<(String, PianoRoll)>) -> Result<Self, SearchError> {
        let entries = rolls
            .into_iter()
            .enumerate()
            .map(|(i, (source, full))| {
                let compressed = compress_bar_roll(&full).map_err(|_| SearchError::BarShape(i))?;
                Ok(IndexEntry { compressed, full, source, track: 0, bar: i as u32 })
            })
            .collect::<Result<_, SearchError>>()?;
        Ok(CorpusIndex { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn save(&self, mut w: impl Write) -> Result<(), SearchError> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.source.len() as u32).to_le_bytes())?;
            w.write_all(e.source.as_bytes())?;
            w.write_all(&e.track.to_le_bytes())?;
            w.write_all(&e.bar.to_le_bytes())?;
            for word in e.full.words().iter().chain(e.compressed.words()) {
                w.write_all(&word.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Self, SearchError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SearchError::Format("bad magic bytes".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(SearchError::Format(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8);
        let full_shape = (STEPS_PER_WHOLE as usize, PITCHES);
        let small_shape =
            compress_bar_roll(&BoolMatrix::new(full_shape.0, full_shape.1)).expect("48-step roll").shape();
        let full_words = BoolMatrix::new(full_shape.0, full_shape.1).words().len();
        let small_words = BoolMatrix::new(small_shape.0, small_shape.1).words().len();
        let mut entries = Vec::new();
        for _ in 0..n {
            let len = read_u32(&mut r)? as usize;
            let mut s = Vec::new();
            (&mut r).take(len as u64).read_to_end(&mut s)?;
            if s.len() != len {
                return Err(SearchError::Format("truncated source".into()));
            }
            let source = String::from_utf8(s).map_err(|_| SearchError::Format("source is not utf-8".into()))?;
            let track = read_u32(&mut r)?;
            let bar = read_u32(&mut r)?;
            let mut words = |count: usize| -> Result<Vec<u64>, SearchError> {
                (0..count)
                    .map(|_| {
                        let mut b = [0u8; 8];
                        r.read_exact(&mut b)?;
                        Ok(u64::from_le_bytes(b))
                    })
                    .collect()
            };
            let bad = || SearchError::Format("roll bits outside the matrix".into());
            let full = BoolMatrix::from_words(full_shape.0, full_shape.1, words(full_words)?).ok_or_else(bad)?;
            let compressed =
                BoolMatrix::from_words(small_shape.0, small_shape.1, words(small_words)?).ok_or_else(bad)?;
            entries.push(IndexEntry { compressed, full, source, track, bar });
        }
        Ok(CorpusIndex { entries })
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Minimum full-roll distance per excerpt bar; `None` when no index entry
    /// passed the prefilter.
    pub per_bar: Vec<Option<f64>>,
}

impl SearchResult {
    /// Largest per-bar minimum, or `None` if some bar had no candidate.
    pub fn aggregate(&self) -> Option<f64> {
        self.per_bar.iter().try_fold(0.0f64, |acc, d| d.map(|d| acc.max(d)))
    }

    /// Matched iff every bar has a neighbour within `tau`.
    pub fn matched(&self, tau: f64) -> bool {
        self.per_bar.iter().all(|d| d.is_some_and(|d| d <= tau))
    }
}

/// Searches each 48×128 bar of the excerpt against the index. With a
/// prefilter, only entries whose compressed distance is within it get a
/// full-roll comparison.
pub fn nearest_in_corpus(
    excerpt: &[PianoRoll],
    index: &CorpusIndex,
    prefilter: Option<f64>,
) -> Result<SearchResult, SearchError> {
    if index.is_empty() {
        return Err(SearchError::EmptyIndex);
    }
    let per_bar = excerpt
        .iter()
        .enumerate()
        .map(|(i, bar)| {
            let small = compress_bar_roll(bar).map_err(|_| SearchError::BarShape(i))?;
            Ok(index
                .entries
                .par_iter()
                .filter(|e| prefilter.is_none_or(|pf| hamming(&small, &e.compressed).expect("same shape") <= pf))
                .map(|e| hamming(bar, &e.full).expect("same shape"))
                .min_by(f64::total_cmp))
        })
        .collect::<Result<_, SearchError>>()?;
    Ok(SearchResult { per_bar })
}

/// Single-bar rolls of an excerpt, or `None` if a bar is not 48 steps long.
pub fn excerpt_rolls(piece: &Piece, track: usize, bars: std::ops::Range<usize>) -> Option<Vec<PianoRoll>> {
    let t = piece.tracks.get(track)?;
    bars.map(|b| bar_roll(t, b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_roll(rng: &mut ChaCha8Rng, density: f64) -> PianoRoll {
        let mut m = BoolMatrix::new(48, 128);
        for r in 0..48 {
            for c in 0..128 {
                if rng.random_bool(density) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    fn index_of(rolls: &[PianoRoll]) -> CorpusIndex {
        CorpusIndex::from_rolls(rolls.iter().map(|r| ("x".to_string(), r.clone())).collect()).unwrap()
    }

    #[test]
    fn verbatim_excerpt_matches_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rolls: Vec<_> = (0..20).map(|_| random_roll(&mut rng, 0.05)).collect();
        let idx = index_of(&rolls);
        let res = nearest_in_corpus(&rolls[3..7], &idx, Some(DEFAULT_PREFILTER)).unwrap();
        assert_eq!(res.per_bar, vec![Some(0.0); 4]);
        assert_eq!(res.aggregate(), Some(0.0));
        assert!(res.matched(0.0));
    }

    #[test]
    fn unmatched_when_one_bar_is_far() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rolls: Vec<_> = (0..10).map(|_| random_roll(&mut rng, 0.02)).collect();
        let idx = index_of(&rolls);
        let far = random_roll(&mut rng, 0.5);
        let excerpt = vec![rolls[0].clone(), far.clone()];
        let res = nearest_in_corpus(&excerpt, &idx, None).unwrap();
        let exhaustive = rolls.iter().map(|r| hamming(&far, r).unwrap()).fold(f64::INFINITY, f64::min);
        assert_eq!(res.per_bar[1], Some(exhaustive));
        assert!(!res.matched(0.1));
        assert_eq!(nearest_in_corpus(&excerpt, &idx, Some(0.25)).unwrap().per_bar[1], None);
    }

    #[test]
    fn empty_index_is_an_error() {
        assert!(matches!(
            nearest_in_corpus(&[BoolMatrix::new(48, 128)], &CorpusIndex::default(), None),
            Err(SearchError::EmptyIndex)
        ));
    }

    #[test]
    fn persistence_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let idx = index_of(&(0..5).map(|_| random_roll(&mut rng, 0.1)).collect::<Vec<_>>());
        let mut buf = Vec::new();
        idx.save(&mut buf).unwrap();
        assert_eq!(CorpusIndex::load(&buf[..]).unwrap(), idx);
        assert!(CorpusIndex::load(&buf[..buf.len() - 1]).is_err());
    }
}
