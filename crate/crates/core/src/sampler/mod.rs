//! Grammar-masked sampling: new tracks and bar infilling.

pub mod grammar;

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controls::ControlSpec;
use crate::eval::roll::masked_jaccard;
use crate::predictor::{PredictorError, TokenPredictor};
use crate::score::{Piece, Program, TimeSig};
use crate::tokenizer::vocab::{ids, Token};
use crate::tokenizer::{
    decode, decode_partial, encode_barfill, encode_multitrack, EncodeError, EncodeOptions, Mode, TokenSeq, Vocab,
};
use grammar::{GrammarConfig, GrammarState, Phase};

pub use grammar::{GrammarError, TokenMask};

pub const DEFAULT_MAX_TOKENS: usize = 2048;
pub const DEFAULT_RETRIES: usize = 8;
pub const DEFAULT_DUPLICATE_THRESHOLD: f64 = 0.99;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleParams {
    pub temperature: f64,
    /// Budget of generated tokens, prompt excluded.
    pub max_tokens: usize,
    pub l_poly: Option<u32>,
    pub seed: u64,
    pub reject_duplicates: bool,
    pub reject_silence: bool,
    pub duplicate_threshold: f64,
    pub max_retries: usize,
    pub expressive: bool,
    pub with_controls: bool,
    /// Bars of 4/4 used when generating over an empty piece.
    pub n_bars: usize,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            temperature: 1.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            l_poly: None,
            seed: 0,
            reject_duplicates: false,
            reject_silence: false,
            duplicate_threshold: DEFAULT_DUPLICATE_THRESHOLD,
            max_retries: DEFAULT_RETRIES,
            expressive: false,
            with_controls: false,
            n_bars: 8,
        }
    }
}

/// Requested instrument and controls for one generated track.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackRequest {
    pub program: Option<Program>,
    pub controls: ControlSpec,
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("token budget of {budget} exhausted before the piece was complete")]
    Budget { budget: usize, partial: Box<Piece> },
    #[error("every one of {attempts} attempts was rejected")]
    RetriesExhausted { attempts: usize, last: Box<Piece> },
    #[error("mask is empty")]
    EmptyMask,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("grammar admits no token at position {0}")]
    DeadEnd(usize),
    #[error("generated sequence failed to decode: {0}")]
    Decode(String),
}

/// Draws one admitted id from `q^(1/T)` restricted to the mask. Admitted ids
/// with zero total mass fall back to a uniform draw over the mask.
pub fn sample_masked(dist: &[f64], mask: &TokenMask, temperature: f64, rng: &mut impl Rng) -> Option<u32> {
    let admitted: Vec<u32> = mask.iter().collect();
    if admitted.is_empty() {
        return None;
    }
    let inv_t = 1.0 / temperature;
    let weights: Vec<f64> = admitted
        .iter()
        .map(|&id| {
            let q = dist.get(id as usize).copied().unwrap_or(0.0);
            if q > 0.0 && q.is_finite() {
                q.powf(inv_t)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Some(admitted[rng.random_range(0..admitted.len())]);
    }
    let mut r = rng.random::<f64>() * total;
    for (&id, &w) in admitted.iter().zip(&weights) {
        if r < w {
            return Some(id);
        }
        r -= w;
    }
    admitted.iter().zip(&weights).rev().find(|(_, &w)| w > 0.0).map(|(&id, _)| id)
}

fn control_slot(id: u32) -> u8 {
    match id {
        _ if id >= ids::STYLE => 0,
        _ if (ids::DENSITY..ids::DENSITY + 10).contains(&id) => 1,
        _ if (ids::MIN_POLY..ids::MIN_POLY + 16).contains(&id) => 2,
        _ if (ids::MAX_POLY..ids::MAX_POLY + 16).contains(&id) => 3,
        _ if (ids::MIN_DUR..ids::MIN_DUR + 5).contains(&id) => 4,
        _ if (ids::MAX_DUR..ids::MAX_DUR + 5).contains(&id) => 5,
        _ => u8::MAX,
    }
}

fn forced_controls(vocab: &Vocab, spec: &ControlSpec) -> Result<VecDeque<u32>, SampleError> {
    let mut q = VecDeque::new();
    let mut push = |t: Token| {
        vocab
            .id(t)
            .map(|id| q.push_back(id))
            .ok_or_else(|| SampleError::InvalidRequest(format!("control {t} is out of range")))
    };
    if let Some(d) = spec.density {
        push(Token::Density(d))?;
    }
    if let Some((lo, hi)) = spec.poly_range {
        if lo > hi {
            return Err(SampleError::InvalidRequest(format!("polyphony range {lo}..{hi}")));
        }
        push(Token::MinPoly(lo))?;
        push(Token::MaxPoly(hi))?;
    }
    if let Some((lo, hi)) = spec.dur_range {
        if lo > hi {
            return Err(SampleError::InvalidRequest(format!("duration range {lo}..{hi}")));
        }
        push(Token::MinDur(lo))?;
        push(Token::MaxDur(hi))?;
    }
    Ok(q)
}

struct Session<'a, P: ?Sized> {
    vocab: &'a Vocab,
    predictor: &'a P,
    grammar: GrammarState,
    ids: Vec<u32>,
    rng: ChaCha8Rng,
    temperature: f64,
}

impl<'a, P: TokenPredictor + ?Sized> Session<'a, P> {
    fn new(
        vocab: &'a Vocab,
        predictor: &'a P,
        cfg: GrammarConfig,
        prompt: &[u32],
        seed: u64,
        temperature: f64,
    ) -> Result<Self, SampleError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(SampleError::Temperature(temperature));
        }
        if predictor.vocab_size() != vocab.size() {
            return Err(PredictorError::Size { got: predictor.vocab_size(), want: vocab.size() }.into());
        }
        let mut grammar = GrammarState::new(cfg, vocab);
        // The prompt comes from the encoder; hard limits only bind new tokens.
        for &id in prompt {
            grammar.apply(vocab.token(id).expect("encoder ids are in the vocabulary"));
        }
        Ok(Session {
            vocab,
            predictor,
            grammar,
            ids: prompt.to_vec(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            temperature,
        })
    }

    fn sample(&mut self, mask: &TokenMask) -> Result<Token, SampleError> {
        let dist = self.predictor.next_distribution(&self.ids)?;
        if dist.len() != self.vocab.size() {
            return Err(PredictorError::Size { got: dist.len(), want: self.vocab.size() }.into());
        }
        let id =
            sample_masked(&dist, mask, self.temperature, &mut self.rng).ok_or(SampleError::DeadEnd(self.ids.len()))?;
        let token = self.vocab.token(id).expect("mask within vocabulary");
        self.grammar.apply(token);
        self.ids.push(id);
        Ok(token)
    }

    fn seq(&self) -> TokenSeq {
        let cfg = self.grammar.config();
        TokenSeq { ids: self.ids.clone(), mode: cfg.mode, expressive: cfg.expressive, meters: cfg.meters.clone() }
    }
}

fn encode_opts(params: &SampleParams) -> EncodeOptions {
    EncodeOptions { expressive: params.expressive, with_controls: params.with_controls }
}

/// Appends `n_new` generated tracks to `piece`. Requested instruments and
/// controls are forced; remaining control slots are left to the predictor.
pub fn generate_tracks<P: TokenPredictor + ?Sized>(
    piece: &Piece,
    n_new: usize,
    overrides: &[TrackRequest],
    predictor: &P,
    vocab: &Vocab,
    params: &SampleParams,
) -> Result<Piece, SampleError> {
    if overrides.len() > n_new {
        return Err(SampleError::InvalidRequest(format!("{} overrides for {n_new} new tracks", overrides.len())));
    }
    let forced: Vec<(Option<u32>, VecDeque<u32>)> = overrides
        .iter()
        .map(|o| Ok((o.program.map(|p| vocab.must(Token::Instrument(p))), forced_controls(vocab, &o.controls)?)))
        .collect::<Result<_, SampleError>>()?;

    let meters = if piece.tracks.is_empty() { vec![TimeSig::FOUR_FOUR; params.n_bars] } else { piece.meters() };
    let prompt = encode_multitrack(piece, vocab, encode_opts(params))?;
    let existing = piece.tracks.len();
    let mut cfg = GrammarConfig::new(Mode::MultiTrack, params.expressive, meters);
    cfg.track_limit = Some(existing + n_new);
    cfg.poly_limit = params.l_poly;
    let mut s = Session::new(vocab, predictor, cfg, &prompt.ids, params.seed, params.temperature)?;

    let mut queue = VecDeque::new();
    let mut generated = 0;
    while !s.grammar.is_done() {
        if generated >= params.max_tokens {
            let partial = decode_partial(&s.seq(), vocab).map_err(|e| SampleError::Decode(e.to_string()))?;
            return Err(SampleError::Budget {
                budget: params.max_tokens,
                partial: Box::new(merge_new_tracks(piece, partial.piece, existing)),
            });
        }
        let mut mask = s.grammar.valid_next();
        let new_index = s.grammar.tracks_started().checked_sub(existing + 1);
        match s.grammar.phase() {
            Phase::ExpectInstrument => {
                if let Some((Some(id), _)) = new_index.and_then(|i| forced.get(i)) {
                    mask.retain(|x| x == *id);
                }
            }
            Phase::Controls => {
                if let Some(&front) = queue.front() {
                    let limit = control_slot(front);
                    mask.retain(|x| x == front || control_slot(x) < limit);
                }
            }
            _ => {}
        }
        let token = s.sample(&mask)?;
        generated += 1;
        match token {
            Token::Instrument(_) => {
                queue = new_index.and_then(|i| forced.get(i)).map(|(_, q)| q.clone()).unwrap_or_default();
            }
            _ if queue.front() == Some(&s.ids[s.ids.len() - 1]) => {
                queue.pop_front();
            }
            _ => {}
        }
    }
    let decoded = decode(&s.seq(), vocab).map_err(|e| SampleError::Decode(e.to_string()))?;
    Ok(merge_new_tracks(piece, decoded.piece, existing))
}

fn merge_new_tracks(original: &Piece, decoded: Piece, existing: usize) -> Piece {
    let mut out = original.clone();
    out.tracks.extend(decoded.tracks.into_iter().skip(existing));
    out
}

/// Regenerates the masked bars conditioned on everything else. Unmasked
/// material of the result is identical to the input.
pub fn infill_bars<P: TokenPredictor + ?Sized>(
    piece: &Piece,
    mask: &[(usize, usize)],
    predictor: &P,
    vocab: &Vocab,
    params: &SampleParams,
) -> Result<Piece, SampleError> {
    if mask.is_empty() {
        return Err(SampleError::EmptyMask);
    }
    let cells: Vec<(usize, usize)> = mask.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let full = encode_barfill(piece, vocab, &cells, encode_opts(params))?;
    let cut = full.ids.iter().position(|&id| id == ids::FILL_START).unwrap_or(full.ids.len());
    let prompt = &full.ids[..cut];
    let attempts = params.max_retries.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        let mut cfg = GrammarConfig::new(Mode::BarFill, params.expressive, piece.meters());
        cfg.track_limit = Some(piece.tracks.len());
        cfg.poly_limit = params.l_poly;
        let seed = params.seed.wrapping_add(attempt as u64);
        let mut s = Session::new(vocab, predictor, cfg, prompt, seed, params.temperature)?;
        let mut generated = 0;
        while !s.grammar.is_complete() {
            if generated >= params.max_tokens {
                let partial = decode_partial(&s.seq(), vocab).map_err(|e| SampleError::Decode(e.to_string()))?;
                return Err(SampleError::Budget {
                    budget: params.max_tokens,
                    partial: Box::new(merge_fills(piece, &partial.piece, &cells)),
                });
            }
            let mask = s.grammar.valid_next();
            s.sample(&mask)?;
            generated += 1;
        }
        let decoded = decode(&s.seq(), vocab).map_err(|e| SampleError::Decode(e.to_string()))?;
        let candidate = merge_fills(piece, &decoded.piece, &cells);
        let silent = cells.iter().all(|&(t, b)| candidate.tracks[t].bars[b].is_empty());
        let duplicate = params.reject_duplicates
            && masked_jaccard(piece, &candidate, &cells).expect("same layout") >= params.duplicate_threshold;
        if !(params.reject_silence && silent) && !duplicate {
            return Ok(candidate);
        }
        last = Some(candidate);
    }
    Err(SampleError::RetriesExhausted { attempts, last: Box::new(last.expect("at least one attempt")) })
}

/// Copies the masked bars of `decoded` into a clone of `original`.
fn merge_fills(original: &Piece, decoded: &Piece, cells: &[(usize, usize)]) -> Piece {
    let mut out = original.clone();
    for &(t, b) in cells {
        if let Some(bar) = decoded.tracks.get(t).and_then(|tr| tr.bars.get(b)) {
            out.tracks[t].bars[b] = bar.clone();
        }
    }
    out
}
