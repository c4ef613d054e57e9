//! Training examples: random multi-track segments with track shuffling,
//! transposition and bar masking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controls::{annotate, ControlTable};
use crate::score::{slice_segment, transpose, Piece};
use crate::tokenizer::{encode_barfill, encode_multitrack, EncodeError, EncodeOptions, TokenSeq, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub bar_choices: Vec<usize>,
    pub max_tracks: usize,
    pub infill_probability: f64,
    pub mask_ceiling: f64,
    pub transpose_min: i32,
    pub transpose_max: i32,
    pub expressive: bool,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            bar_choices: vec![4, 8],
            max_tracks: 12,
            infill_probability: 0.75,
            mask_ceiling: 0.75,
            transpose_min: -6,
            transpose_max: 5,
            expressive: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("no corpus piece has at least 2 tracks and {0} bars")]
    NoEligiblePieces(usize),
    #[error("invalid pipeline parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub seq: TokenSeq,
    pub piece_index: usize,
    pub start_bar: usize,
    pub n_bars: usize,
    /// Source track indices in the order they were encoded.
    pub track_order: Vec<usize>,
    pub transpose: i32,
    /// Number of masked bars; zero for Multi-Track examples.
    pub mask_size: usize,
}

fn check(params: &PipelineParams) -> Result<(), PipelineError> {
    let bad = |m: &str| Err(PipelineError::Params(m.to_string()));
    if params.bar_choices.is_empty() || params.bar_choices.contains(&0) {
        return bad("bar choices must be non-empty and positive");
    }
    if params.max_tracks < 2 {
        return bad("max_tracks must be at least 2");
    }
    if !(0.0..=1.0).contains(&params.infill_probability) || !(0.0..=1.0).contains(&params.mask_ceiling) {
        return bad("probabilities must lie in [0, 1]");
    }
    if params.transpose_min > params.transpose_max {
        return bad("transpose range is empty");
    }
    Ok(())
}

/// Draws `count` examples. Pieces with fewer than 2 tracks or too few bars
/// for a segment length are skipped for that length.
pub fn make_training_examples(
    corpus: &[Piece],
    vocab: &Vocab,
    table: Option<&ControlTable>,
    params: &PipelineParams,
    count: usize,
) -> Result<Vec<TrainingExample>, PipelineError> {
    check(params)?;
    let eligible: Vec<(usize, Vec<usize>)> = params
        .bar_choices
        .iter()
        .map(|&n| {
            let pieces =
                (0..corpus.len()).filter(|&i| corpus[i].tracks.len() >= 2 && corpus[i].bar_count() >= n).collect();
            (n, pieces)
        })
        .filter(|(_, pieces): &(usize, Vec<usize>)| !pieces.is_empty())
        .collect();
    if eligible.is_empty() {
        let min = params.bar_choices.iter().copied().min().unwrap_or(0);
        return Err(PipelineError::NoEligiblePieces(min));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let opts = EncodeOptions { expressive: params.expressive, with_controls: table.is_some() };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (n_bars, pieces) = &eligible[rng.random_range(0..eligible.len())];
        let n_bars = *n_bars;
        let piece_index = pieces[rng.random_range(0..pieces.len())];
        let piece = &corpus[piece_index];
        let start_bar = rng.random_range(0..=piece.bar_count() - n_bars);
        let k = rng.random_range(2..=piece.tracks.len().min(params.max_tracks));
        let mut order: Vec<usize> = (0..piece.tracks.len()).collect();
        order.shuffle(&mut rng);
        order.truncate(k);
        let shift = rng.random_range(params.transpose_min..=params.transpose_max);

        let mut segment = transpose(&slice_segment(piece, start_bar, n_bars, &order).expect("segment in range"), shift);
        if segment.style.as_deref().is_some_and(|s| vocab.style_index(s).is_none()) {
            segment.style = None;
        }
        segment = match table {
            Some(t) => annotate(&segment, t),
            None => {
                for track in &mut segment.tracks {
                    track.controls = None;
                }
                segment
            }
        };

        let mut mask_size = 0;
        let seq = if rng.random_bool(params.infill_probability) {
            let ceiling = (k as f64 * n_bars as f64 * params.mask_ceiling).floor() as usize;
            mask_size = rng.random_range(0..=ceiling);
            let mut cells: Vec<(usize, usize)> = (0..k).flat_map(|t| (0..n_bars).map(move |b| (t, b))).collect();
            let (chosen, _) = cells.partial_shuffle(&mut rng, mask_size);
            if mask_size == 0 {
                encode_multitrack(&segment, vocab, opts)?
            } else {
                encode_barfill(&segment, vocab, chosen, opts)?
            }
        } else {
            encode_multitrack(&segment, vocab, opts)?
        };
        out.push(TrainingExample {
            seq,
            piece_index,
            start_bar,
            n_bars,
            track_order: order,
            transpose: shift,
            mask_size,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// 80/10/10 file-level split keyed on a hash of the file name.
pub fn split_of(name: &str) -> Split {
    let digest = Sha256::digest(name.as_bytes());
    let bucket = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes")) % 100;
    match bucket {
        0..80 => Split::Train,
        80..90 => Split::Valid,
        _ => Split::Test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{Bar, Note, Program, TimeSig, Track};
    use crate::tokenizer::Mode;

    fn piece(tracks: usize, bars: usize) -> Piece {
        Piece::new(
            (0..tracks)
                .map(|t| {
                    Track::new(
                        if t == 0 { Program::Drum } else { Program::Melodic(t as u8) },
                        (0..bars)
                            .map(|b| {
                                Bar::new(
                                    TimeSig::FOUR_FOUR,
                                    vec![Note::new(40 + (t * 7 + b) as u8 % 40, (b % 4) as u32 * 12, 6)],
                                )
                                .unwrap()
                            })
                            .collect(),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn zero_infill_probability_gives_multitrack() {
        let corpus = vec![piece(3, 8), piece(4, 12)];
        let params = PipelineParams { infill_probability: 0.0, ..PipelineParams::default() };
        let ex = make_training_examples(&corpus, &Vocab::new(), None, &params, 200).unwrap();
        assert!(ex.iter().all(|e| e.seq.mode == Mode::MultiTrack && e.mask_size == 0));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let corpus = vec![piece(3, 8), piece(5, 9)];
        let params = PipelineParams { seed: 11, ..PipelineParams::default() };
        let a = make_training_examples(&corpus, &Vocab::new(), None, &params, 50).unwrap();
        let b = make_training_examples(&corpus, &Vocab::new(), None, &params, 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn example_shapes_follow_params() {
        let corpus = vec![piece(1, 16), piece(14, 4), piece(3, 8)];
        let ex = make_training_examples(&corpus, &Vocab::new(), None, &PipelineParams::default(), 300).unwrap();
        for e in &ex {
            assert_ne!(e.piece_index, 0);
            let n_tracks = corpus[e.piece_index].tracks.len();
            assert!((2..=n_tracks.min(12)).contains(&e.track_order.len()));
            assert!([4, 8].contains(&e.n_bars));
            assert!((-6..=5).contains(&e.transpose));
            assert!(e.mask_size <= e.track_order.len() * e.n_bars * 3 / 4);
            let decoded = crate::tokenizer::decode(&e.seq, &Vocab::new()).unwrap();
            assert_eq!(decoded.mask.len(), e.mask_size);
            assert_eq!(decoded.piece.tracks.len(), e.track_order.len());
        }
        assert!(ex.iter().any(|e| e.piece_index == 1));
    }

    #[test]
    fn ineligible_corpus_is_an_error() {
        let corpus = vec![piece(1, 16), piece(3, 2)];
        assert_eq!(
            make_training_examples(&corpus, &Vocab::new(), None, &PipelineParams::default(), 5),
            Err(PipelineError::NoEligiblePieces(4))
        );
    }

    #[test]
    fn split_proportions() {
        let mut counts = [0usize; 3];
        for i in 0..10_000 {
            counts[split_of(&format!("file_{i}.mid")) as usize] += 1;
        }
        assert!((7700..8300).contains(&counts[0]), "{counts:?}");
        assert!((800..1200).contains(&counts[1]), "{counts:?}");
        assert_eq!(split_of("a.mid"), split_of("a.mid"));
    }
}
