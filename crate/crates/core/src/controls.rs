//! Attribute controls measured from musical material: per-instrument note
//! density levels, note-duration ranges and polyphony ranges.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{Piece, Program, Track};

pub const DENSITY_LEVELS: u8 = 10;
pub const POLY_MAX: u8 = 16;
pub const DURATION_LEVELS: u8 = 5;
pub const TABLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("corpus contains no bars")]
    EmptyCorpus,
    #[error("track has no notes")]
    NoContent,
    #[error("invalid control table: {0}")]
    Table(String),
}

/// Control values attached to a track. Absent fields emit no tokens.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlSpec {
    pub density: Option<u8>,
    pub poly_range: Option<(u8, u8)>,
    pub dur_range: Option<(u8, u8)>,
}

impl ControlSpec {
    pub fn is_empty(&self) -> bool {
        self.density.is_none() && self.poly_range.is_none() && self.dur_range.is_none()
    }

    /// Fills the fields of `self` that are unset from `other`.
    pub fn or(&self, other: &ControlSpec) -> ControlSpec {
        ControlSpec {
            density: self.density.or(other.density),
            poly_range: self.poly_range.or(other.poly_range),
            dur_range: self.dur_range.or(other.dur_range),
        }
    }
}

/// The `ceil(p/100 * N)`-th order statistic of an ascending slice.
pub fn nearest_rank<T: Copy>(sorted: &[T], percentile: u32) -> T {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len() as u64;
    let rank = (u64::from(percentile) * n).div_ceil(100).max(1);
    sorted[(rank - 1) as usize]
}

/// Per-instrument 10th..90th percentiles of the onsets-per-bar distribution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlTable {
    programs: BTreeMap<Program, [u32; 9]>,
    fallback: [u32; 9],
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    version: u32,
    programs: BTreeMap<String, [u32; 9]>,
    fallback: [u32; 9],
}

fn deciles(mut counts: Vec<u32>) -> [u32; 9] {
    counts.sort_unstable();
    std::array::from_fn(|i| nearest_rank(&counts, 10 * (i as u32 + 1)))
}

/// Number of note onsets in every bar of the track.
pub fn onsets_per_bar(track: &Track) -> impl Iterator<Item = u32> + '_ {
    track.bars.iter().map(|b| b.notes().len() as u32)
}

/// Collects per-bar onset counts for every instrument of the corpus and
/// stores nearest-rank deciles. Unseen instruments use the pooled
/// distribution.
pub fn build_density_table(corpus: &[Piece]) -> Result<ControlTable, ControlError> {
    let mut per_program: BTreeMap<Program, Vec<u32>> = BTreeMap::new();
    let mut pooled = Vec::new();
    for track in corpus.iter().flat_map(|p| &p.tracks) {
        let counts = per_program.entry(track.program).or_default();
        for c in onsets_per_bar(track) {
            counts.push(c);
            pooled.push(c);
        }
    }
    if pooled.is_empty() {
        return Err(ControlError::EmptyCorpus);
    }
    let programs = per_program
        .into_iter()
        .filter(|(_, counts)| !counts.is_empty())
        .map(|(p, counts)| (p, deciles(counts)))
        .collect();
    Ok(ControlTable { programs, fallback: deciles(pooled) })
}

impl ControlTable {
    /// Boundaries for `program` and whether they came from the pooled fallback.
    pub fn boundaries(&self, program: Program) -> (&[u32; 9], bool) {
        match self.programs.get(&program) {
            Some(b) => (b, false),
            None => (&self.fallback, true),
        }
    }

    pub fn programs(&self) -> impl Iterator<Item = Program> + '_ {
        self.programs.keys().copied()
    }

    pub fn fallback(&self) -> &[u32; 9] {
        &self.fallback
    }

    /// Density level for a mean of `total / bars` onsets per bar. Compared
    /// exactly in integers.
    pub fn level_for(&self, program: Program, total: u64, bars: u64) -> u8 {
        if bars == 0 {
            return 0;
        }
        let (b, _) = self.boundaries(program);
        b.iter().filter(|&&v| u64::from(v) * bars <= total).count() as u8
    }

    /// Levels whose region contains at least one whole onset count in
    /// `0..=max_count`; other levels cannot be produced by any track.
    pub fn attainable_levels(&self, program: Program, max_count: u32) -> Vec<u8> {
        let (b, _) = self.boundaries(program);
        (0..DENSITY_LEVELS)
            .filter(|&level| {
                let lo = if level == 0 { 0 } else { b[level as usize - 1] };
                let hi = if level == 9 { max_count + 1 } else { b[level as usize] };
                lo < hi && lo <= max_count
            })
            .collect()
    }

    /// Smallest whole onset count per bar that lands in `level`.
    pub fn representative_count(&self, program: Program, level: u8) -> u32 {
        let (b, _) = self.boundaries(program);
        if level == 0 {
            0
        } else {
            b[level as usize - 1]
        }
    }

    pub fn to_json(&self) -> String {
        let doc = TableDoc {
            version: TABLE_VERSION,
            programs: self.programs.iter().map(|(p, b)| (p.key(), *b)).collect(),
            fallback: self.fallback,
        };
        serde_json::to_string_pretty(&doc).expect("table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ControlError> {
        let doc: TableDoc = serde_json::from_str(s).map_err(|e| ControlError::Table(e.to_string()))?;
        if doc.version != TABLE_VERSION {
            return Err(ControlError::Table(format!("unsupported version {}", doc.version)));
        }
        let mut programs = BTreeMap::new();
        for (key, b) in doc.programs {
            let p =
                Program::from_key(&key).ok_or_else(|| ControlError::Table(format!("unknown program key {key:?}")))?;
            if b.windows(2).any(|w| w[0] > w[1]) {
                return Err(ControlError::Table(format!("boundaries of {key} decrease")));
            }
            programs.insert(p, b);
        }
        Ok(ControlTable { programs, fallback: doc.fallback })
    }
}

/// Level `i` such that the mean onsets per bar (over all bars, empty ones
/// included) lies in `[b_i, b_{i+1})`.
pub fn density_level(track: &Track, table: &ControlTable) -> u8 {
    let total: u64 = onsets_per_bar(track).map(u64::from).sum();
    table.level_for(track.program, total, track.bars.len() as u64)
}

/// Duration bin over whole-note fractions `[1/32,1/16)`, ..., `[1/2,1)`,
/// clamped at both ends.
pub fn duration_level(duration: u32) -> u8 {
    // d/48 >= 2^l / 32  <=>  2d >= 3 * 2^l
    (1..DURATION_LEVELS).filter(|&l| 2 * duration >= 3 * (1 << l)).count() as u8
}

/// Nearest-rank 15th and 85th percentiles of per-note duration levels.
pub fn duration_range(track: &Track) -> Result<(u8, u8), ControlError> {
    let mut levels: Vec<u8> = track.global_notes().map(|(_, n)| duration_level(n.duration)).collect();
    if levels.is_empty() {
        return Err(ControlError::NoContent);
    }
    levels.sort_unstable();
    Ok((nearest_rank(&levels, 15), nearest_rank(&levels, 85)))
}

/// Polyphony values at every sounding step of the track, clipped to 16.
pub fn sounding_polyphony(track: &Track) -> Vec<u8> {
    track.polyphony_profile().into_iter().filter(|&c| c > 0).map(|c| c.min(u32::from(POLY_MAX)) as u8).collect()
}

/// Nearest-rank 15th and 85th percentiles of the polyphony at sounding steps.
pub fn polyphony_range(track: &Track) -> Result<(u8, u8), ControlError> {
    let mut values = sounding_polyphony(track);
    if values.is_empty() {
        return Err(ControlError::NoContent);
    }
    values.sort_unstable();
    Ok((nearest_rank(&values, 15), nearest_rank(&values, 85)))
}

/// Full control spec of a track; ranges are omitted for silent tracks.
pub fn compute_controls(track: &Track, table: &ControlTable) -> ControlSpec {
    ControlSpec {
        density: Some(density_level(track, table)),
        poly_range: polyphony_range(track).ok(),
        dur_range: duration_range(track).ok(),
    }
}

/// Returns a copy of `piece` with every track's controls recomputed.
pub fn annotate(piece: &Piece, table: &ControlTable) -> Piece {
    let mut out = piece.clone();
    for track in &mut out.tracks {
        track.controls = Some(compute_controls(track, table));
    }
    out
}
