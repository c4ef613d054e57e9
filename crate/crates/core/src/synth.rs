//! Random but plausible multi-track pieces, for tests and the bundled
//! mini-corpus.

use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::score::{Bar, Note, Piece, Program, TimeSig, Track, MAX_DURATION, MICRO_MAX, MICRO_MIN};

#[derive(Clone, Debug)]
pub struct SynthParams {
    pub tracks: RangeInclusive<usize>,
    pub bars: RangeInclusive<usize>,
    /// Chance that a piece switches to 3/4 for a run of bars.
    pub waltz_probability: f64,
    pub expressive: bool,
    pub with_drums: bool,
    pub ticks_per_quarter: u16,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            tracks: 1..=4,
            bars: 1..=8,
            waltz_probability: 0.2,
            expressive: false,
            with_drums: true,
            ticks_per_quarter: 480,
        }
    }
}

const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const DRUM_KIT: [u8; 6] = [36, 38, 42, 46, 49, 51];
const PROGRAMS: [u8; 12] = [0, 4, 24, 25, 32, 33, 40, 48, 56, 65, 73, 81];

fn meters(rng: &mut impl Rng, n: usize, waltz_probability: f64) -> Vec<TimeSig> {
    let mut out = vec![TimeSig::FOUR_FOUR; n];
    if n > 0 && rng.random_bool(waltz_probability) {
        let start = rng.random_range(0..n);
        let len = rng.random_range(1..=n - start);
        for m in &mut out[start..start + len] {
            *m = TimeSig::new(3, 4);
        }
    }
    out
}

/// Generates one track. Same-pitch notes never overlap, so the track
/// survives a trip through a MIDI file.
fn random_track(rng: &mut impl Rng, program: Program, meters: &[TimeSig], expressive: bool) -> Track {
    let lens: Vec<u32> = meters.iter().map(|m| m.steps().expect("synth meters fit")).collect();
    let total: u32 = lens.iter().sum();
    let mut busy_until = [0u32; 128];
    let root = rng.random_range(0..12u8);
    let (low, span) = match program {
        Program::Drum => (0, 0),
        Program::Melodic(p) if (32..40).contains(&p) => (28, 24),
        Program::Melodic(_) => (48, 30),
    };
    let grid = *[3u32, 6, 12].choose(rng).expect("non-empty");
    let rest_chance = rng.random_range(0.1..0.6);
    let max_chord = rng.random_range(1..=4usize);
    let mut bars = Vec::with_capacity(meters.len());
    let mut offset = 0;
    for (&ts, &len) in meters.iter().zip(&lens) {
        let mut notes = Vec::new();
        let mut onset = 0;
        while onset < len {
            if !rng.random_bool(rest_chance) {
                let g = offset + onset;
                let room = (total - g).min(MAX_DURATION);
                let duration = rng.random_range(1..=room.min(grid * 4));
                let chord = if program.is_drum() { rng.random_range(1..=2) } else { rng.random_range(1..=max_chord) };
                for _ in 0..chord {
                    let pitch = if program.is_drum() {
                        *DRUM_KIT.choose(rng).expect("non-empty")
                    } else {
                        let degree = rng.random_range(0..(span / 12 + 1) * 7) as u8;
                        low + root + 12 * (degree / 7) + MAJOR[usize::from(degree % 7)]
                    };
                    if busy_until[usize::from(pitch)] > g
                        || notes.iter().any(|n: &Note| n.onset == onset && n.pitch == pitch)
                    {
                        continue;
                    }
                    busy_until[usize::from(pitch)] = g + duration;
                    let mut note = Note::new(pitch, onset, duration);
                    if expressive {
                        note = note.with_expression(rng.random_range(1..=127), rng.random_range(MICRO_MIN..=MICRO_MAX));
                    }
                    notes.push(note);
                }
            }
            onset += grid;
        }
        bars.push(Bar::new(ts, notes).expect("synth notes fit their bar"));
        offset += len;
    }
    if bars.iter().all(Bar::is_empty) {
        let pitch = if program.is_drum() { 36 } else { 60 };
        bars[0] = Bar::new(meters[0], vec![Note::new(pitch, 0, 1)]).expect("valid");
    }
    Track::new(program, bars)
}

pub fn random_piece(rng: &mut impl Rng, params: &SynthParams) -> Piece {
    let n_bars = rng.random_range(params.bars.clone());
    let n_tracks = rng.random_range(params.tracks.clone());
    let meters = meters(rng, n_bars, params.waltz_probability);
    let tracks = (0..n_tracks)
        .map(|i| {
            let program = if params.with_drums && i == 0 && rng.random_bool(0.7) {
                Program::Drum
            } else {
                Program::Melodic(*PROGRAMS.choose(rng).expect("non-empty"))
            };
            random_track(rng, program, &meters, params.expressive)
        })
        .collect();
    Piece { tracks, ticks_per_quarter: params.ticks_per_quarter, style: None }
}
