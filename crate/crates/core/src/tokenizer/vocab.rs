//! Token vocabulary with contiguous id ranges per family.
//!
//! Every family except STYLE has a fixed size, so the id layout only depends
//! on the number of style labels, which sit at the end of the table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::score::Program;

pub const VOCAB_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Token {
    Start,
    StartFill,
    TrackStart,
    TrackEnd,
    BarStart,
    BarEnd,
    FillIn,
    FillStart,
    FillEnd,
    Instrument(Program),
    NoteOn(u8),
    /// Steps from the bar start, `0..96`.
    TimePosition(u8),
    /// Steps, `1..=96`.
    Duration(u8),
    Density(u8),
    MinPoly(u8),
    MaxPoly(u8),
    MinDur(u8),
    MaxDur(u8),
    Velocity(u8),
    /// Microtiming magnitude, `1..=80`.
    Delta(u8),
    DeltaNeg,
    Style(u16),
}

/// Token families in id order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    Start,
    StartFill,
    TrackStart,
    TrackEnd,
    BarStart,
    BarEnd,
    FillIn,
    FillStart,
    FillEnd,
    Instrument,
    NoteOn,
    TimePosition,
    Duration,
    Density,
    MinPoly,
    MaxPoly,
    MinDur,
    MaxDur,
    Velocity,
    Delta,
    DeltaNeg,
    Style,
}

impl Family {
    pub const FIXED: [(Family, u32); 21] = [
        (Family::Start, 1),
        (Family::StartFill, 1),
        (Family::TrackStart, 1),
        (Family::TrackEnd, 1),
        (Family::BarStart, 1),
        (Family::BarEnd, 1),
        (Family::FillIn, 1),
        (Family::FillStart, 1),
        (Family::FillEnd, 1),
        (Family::Instrument, 129),
        (Family::NoteOn, 128),
        (Family::TimePosition, 96),
        (Family::Duration, 96),
        (Family::Density, 10),
        (Family::MinPoly, 16),
        (Family::MaxPoly, 16),
        (Family::MinDur, 5),
        (Family::MaxDur, 5),
        (Family::Velocity, 128),
        (Family::Delta, 80),
        (Family::DeltaNeg, 1),
    ];

    /// First id of the family.
    pub const fn start(self) -> u32 {
        let mut i = 0;
        let mut acc = 0;
        while i < Self::FIXED.len() {
            if Self::FIXED[i].0 as u32 == self as u32 {
                return acc;
            }
            acc += Self::FIXED[i].1;
            i += 1;
        }
        acc
    }
}

/// Number of ids before the style labels.
pub const FIXED_SIZE: u32 = Family::Style.start();

pub mod ids {
    use super::Family;

    pub const START: u32 = Family::Start.start();
    pub const START_FILL: u32 = Family::StartFill.start();
    pub const TRACK_START: u32 = Family::TrackStart.start();
    pub const TRACK_END: u32 = Family::TrackEnd.start();
    pub const BAR_START: u32 = Family::BarStart.start();
    pub const BAR_END: u32 = Family::BarEnd.start();
    pub const FILL_IN: u32 = Family::FillIn.start();
    pub const FILL_START: u32 = Family::FillStart.start();
    pub const FILL_END: u32 = Family::FillEnd.start();
    pub const INSTRUMENT: u32 = Family::Instrument.start();
    pub const NOTE_ON: u32 = Family::NoteOn.start();
    pub const TIME_POSITION: u32 = Family::TimePosition.start();
    pub const DURATION: u32 = Family::Duration.start();
    pub const DENSITY: u32 = Family::Density.start();
    pub const MIN_POLY: u32 = Family::MinPoly.start();
    pub const MAX_POLY: u32 = Family::MaxPoly.start();
    pub const MIN_DUR: u32 = Family::MinDur.start();
    pub const MAX_DUR: u32 = Family::MaxDur.start();
    pub const VELOCITY: u32 = Family::Velocity.start();
    pub const DELTA: u32 = Family::Delta.start();
    pub const DELTA_NEG: u32 = Family::DeltaNeg.start();
    pub const STYLE: u32 = Family::Style.start();
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    styles: Vec<String>,
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct FamilyRange {
    pub family: Family,
    pub start: u32,
    pub count: u32,
}

/// Exported id layout so that externally trained predictors can align their
/// output layer with this vocabulary.
#[derive(Serialize, Deserialize, Debug, PartialEq)]
pub struct VocabTable {
    pub version: u32,
    pub size: u32,
    pub families: Vec<FamilyRange>,
    pub styles: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Vocab::default()
    }

    pub fn with_styles(styles: Vec<String>) -> Self {
        Vocab { styles }
    }

    pub fn size(&self) -> usize {
        FIXED_SIZE as usize + self.styles.len()
    }

    pub fn styles(&self) -> &[String] {
        &self.styles
    }

    pub fn style_index(&self, label: &str) -> Option<u16> {
        self.styles.iter().position(|s| s == label).map(|i| i as u16)
    }

    pub fn id(&self, token: Token) -> Option<u32> {
        use Token::*;
        let in_range = |v: u8, lo: u8, hi: u8| (lo..=hi).contains(&v).then(|| u32::from(v - lo));
        Some(match token {
            Start => ids::START,
            StartFill => ids::START_FILL,
            TrackStart => ids::TRACK_START,
            TrackEnd => ids::TRACK_END,
            BarStart => ids::BAR_START,
            BarEnd => ids::BAR_END,
            FillIn => ids::FILL_IN,
            FillStart => ids::FILL_START,
            FillEnd => ids::FILL_END,
            Instrument(Program::Melodic(p)) => ids::INSTRUMENT + in_range(p, 0, 127)?,
            Instrument(Program::Drum) => ids::INSTRUMENT + 128,
            NoteOn(p) => ids::NOTE_ON + in_range(p, 0, 127)?,
            TimePosition(t) => ids::TIME_POSITION + in_range(t, 0, 95)?,
            Duration(d) => ids::DURATION + in_range(d, 1, 96)?,
            Density(l) => ids::DENSITY + in_range(l, 0, 9)?,
            MinPoly(v) => ids::MIN_POLY + in_range(v, 1, 16)?,
            MaxPoly(v) => ids::MAX_POLY + in_range(v, 1, 16)?,
            MinDur(v) => ids::MIN_DUR + in_range(v, 0, 4)?,
            MaxDur(v) => ids::MAX_DUR + in_range(v, 0, 4)?,
            Velocity(v) => ids::VELOCITY + in_range(v, 0, 127)?,
            Delta(v) => ids::DELTA + in_range(v, 1, 80)?,
            DeltaNeg => ids::DELTA_NEG,
            Style(i) => {
                if usize::from(i) >= self.styles.len() {
                    return None;
                }
                ids::STYLE + u32::from(i)
            }
        })
    }

    pub fn token(&self, id: u32) -> Option<Token> {
        use Token::*;
        let in_fam = |fam: Family, count: u32| {
            let s = fam.start();
            (s..s + count).contains(&id).then(|| (id - s) as u8)
        };
        let tok = match id {
            ids::START => Start,
            ids::START_FILL => StartFill,
            ids::TRACK_START => TrackStart,
            ids::TRACK_END => TrackEnd,
            ids::BAR_START => BarStart,
            ids::BAR_END => BarEnd,
            ids::FILL_IN => FillIn,
            ids::FILL_START => FillStart,
            ids::FILL_END => FillEnd,
            ids::DELTA_NEG => DeltaNeg,
            _ => {
                if let Some(v) = in_fam(Family::Instrument, 129) {
                    Instrument(if v == 128 { Program::Drum } else { Program::Melodic(v) })
                } else if let Some(v) = in_fam(Family::NoteOn, 128) {
                    NoteOn(v)
                } else if let Some(v) = in_fam(Family::TimePosition, 96) {
                    TimePosition(v)
                } else if let Some(v) = in_fam(Family::Duration, 96) {
                    Duration(v + 1)
                } else if let Some(v) = in_fam(Family::Density, 10) {
                    Density(v)
                } else if let Some(v) = in_fam(Family::MinPoly, 16) {
                    MinPoly(v + 1)
                } else if let Some(v) = in_fam(Family::MaxPoly, 16) {
                    MaxPoly(v + 1)
                } else if let Some(v) = in_fam(Family::MinDur, 5) {
                    MinDur(v)
                } else if let Some(v) = in_fam(Family::MaxDur, 5) {
                    MaxDur(v)
                } else if let Some(v) = in_fam(Family::Velocity, 128) {
                    Velocity(v)
                } else if let Some(v) = in_fam(Family::Delta, 80) {
                    Delta(v + 1)
                } else if id >= ids::STYLE && ((id - ids::STYLE) as usize) < self.styles.len() {
                    Style((id - ids::STYLE) as u16)
                } else {
                    return None;
                }
            }
        };
        Some(tok)
    }

    /// Id of a token that is known to be representable.
    pub(crate) fn must(&self, token: Token) -> u32 {
        self.id(token).unwrap_or_else(|| panic!("token {token:?} is outside the vocabulary"))
    }

    pub fn table(&self) -> VocabTable {
        let mut families: Vec<FamilyRange> =
            Family::FIXED.iter().map(|&(family, count)| FamilyRange { family, start: family.start(), count }).collect();
        families.push(FamilyRange { family: Family::Style, start: ids::STYLE, count: self.styles.len() as u32 });
        VocabTable { version: VOCAB_VERSION, size: self.size() as u32, families, styles: self.styles.clone() }
    }

    pub fn table_json(&self) -> String {
        serde_json::to_string_pretty(&self.table()).expect("vocab table serializes")
    }

    /// SHA-256 of the exported table, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.table_json().as_bytes()))
    }

    pub fn from_table(table: &VocabTable) -> Result<Self, String> {
        let vocab = Vocab::with_styles(table.styles.clone());
        if table.version != VOCAB_VERSION {
            return Err(format!("unsupported vocab version {}", table.version));
        }
        if vocab.table() != *table {
            return Err("token table does not match this build's layout".to_string());
        }
        Ok(vocab)
    }

    pub fn display(&self, id: u32) -> String {
        match self.token(id) {
            Some(Token::Style(i)) => format!("STYLE={}", self.styles[usize::from(i)]),
            Some(t) => t.to_string(),
            None => format!("<unk:{id}>"),
        }
    }

    pub fn parse_token(&self, s: &str) -> Option<u32> {
        if let Some(label) = s.strip_prefix("STYLE=") {
            return self.style_index(label).and_then(|i| self.id(Token::Style(i)));
        }
        s.parse::<Token>().ok().and_then(|t| self.id(t))
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Token::*;
        match self {
            Start => f.write_str("START"),
            StartFill => f.write_str("START_FILL"),
            TrackStart => f.write_str("TRACK_START"),
            TrackEnd => f.write_str("TRACK_END"),
            BarStart => f.write_str("BAR_START"),
            BarEnd => f.write_str("BAR_END"),
            FillIn => f.write_str("FILL_IN"),
            FillStart => f.write_str("FILL_START"),
            FillEnd => f.write_str("FILL_END"),
            Instrument(Program::Melodic(p)) => write!(f, "INSTRUMENT={p}"),
            Instrument(Program::Drum) => f.write_str("INSTRUMENT=DRUM"),
            NoteOn(v) => write!(f, "NOTE_ON={v}"),
            TimePosition(v) => write!(f, "TIME_POSITION={v}"),
            Duration(v) => write!(f, "DURATION={v}"),
            Density(v) => write!(f, "DENSITY={v}"),
            MinPoly(v) => write!(f, "MIN_POLY={v}"),
            MaxPoly(v) => write!(f, "MAX_POLY={v}"),
            MinDur(v) => write!(f, "MIN_DUR={v}"),
            MaxDur(v) => write!(f, "MAX_DUR={v}"),
            Velocity(v) => write!(f, "VELOCITY={v}"),
            Delta(v) => write!(f, "DELTA={v}"),
            DeltaNeg => f.write_str("DELTA_NEG"),
            Style(i) => write!(f, "STYLE#{i}"),
        }
    }
}

impl FromStr for Token {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use Token::*;
        let simple = match s {
            "START" => Some(Start),
            "START_FILL" => Some(StartFill),
            "TRACK_START" => Some(TrackStart),
            "TRACK_END" => Some(TrackEnd),
            "BAR_START" => Some(BarStart),
            "BAR_END" => Some(BarEnd),
            "FILL_IN" => Some(FillIn),
            "FILL_START" => Some(FillStart),
            "FILL_END" => Some(FillEnd),
            "DELTA_NEG" => Some(DeltaNeg),
            "INSTRUMENT=DRUM" => Some(Instrument(Program::Drum)),
            _ => None,
        };
        if let Some(t) = simple {
            return Ok(t);
        }
        let bad = || format!("unrecognized token {s:?}");
        let (name, value) = s.split_once('=').ok_or_else(bad)?;
        let v: u8 = value.parse().map_err(|_| bad())?;
        Ok(match name {
            "INSTRUMENT" => Instrument(Program::Melodic(v)),
            "NOTE_ON" => NoteOn(v),
            "TIME_POSITION" => TimePosition(v),
            "DURATION" => Duration(v),
            "DENSITY" => Density(v),
            "MIN_POLY" => MinPoly(v),
            "MAX_POLY" => MaxPoly(v),
            "MIN_DUR" => MinDur(v),
            "MAX_DUR" => MaxDur(v),
            "VELOCITY" => Velocity(v),
            "DELTA" => Delta(v),
            _ => return Err(bad()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_sizes() {
        assert_eq!(FIXED_SIZE, 9 + 129 + 128 + 96 + 96 + 10 + 32 + 10 + 128 + 81);
        assert_eq!(Vocab::new().size(), 719);
        assert_eq!(Vocab::with_styles(vec!["rock".into(), "jazz".into()]).size(), 721);
    }

    #[test]
    fn id_token_bijection() {
        let v = Vocab::with_styles(vec!["rock".into(), "jazz".into()]);
        for id in 0..v.size() as u32 {
            let t = v.token(id).unwrap();
            assert_eq!(v.id(t), Some(id), "{t:?}");
            assert_eq!(v.parse_token(&v.display(id)), Some(id));
        }
        assert_eq!(v.token(v.size() as u32), None);
    }

    #[test]
    fn out_of_range_values_have_no_id() {
        let v = Vocab::new();
        assert_eq!(v.id(Token::Duration(0)), None);
        assert_eq!(v.id(Token::Duration(97)), None);
        assert_eq!(v.id(Token::TimePosition(96)), None);
        assert_eq!(v.id(Token::MinPoly(0)), None);
        assert_eq!(v.id(Token::Delta(81)), None);
        assert_eq!(v.id(Token::Style(0)), None);
    }

    #[test]
    fn table_ranges_are_disjoint_and_cover() {
        let v = Vocab::with_styles(vec!["pop".into()]);
        let t = v.table();
        let mut next = 0;
        for r in &t.families {
            assert_eq!(r.start, next);
            next += r.count;
        }
        assert_eq!(next, t.size);
        assert_eq!(Vocab::from_table(&t).unwrap(), v);
        assert_eq!(v.hash(), Vocab::from_table(&t).unwrap().hash());
        assert_ne!(v.hash(), Vocab::new().hash());
    }
}
