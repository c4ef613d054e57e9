use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackfill_core::predictor::UniformPredictor;
use trackfill_core::sampler::grammar::{GrammarConfig, GrammarState};
use trackfill_core::sampler::{generate_tracks, infill_bars, SampleParams};
use trackfill_core::score::{Piece, TimeSig};
use trackfill_core::synth::{random_piece, SynthParams};
use trackfill_core::tokenizer::vocab::ids;
use trackfill_core::tokenizer::{decode, encode_barfill, EncodeOptions, Mode, TokenSeq, Vocab};

/// Uniform walk over the admissible set until the grammar closes.
fn walk(vocab: &Vocab, cfg: GrammarConfig, prompt: &[u32], rng: &mut ChaCha8Rng) -> TokenSeq {
    let mut g = GrammarState::new(cfg.clone(), vocab);
    for &id in prompt {
        g.step(vocab, id).unwrap();
    }
    let mut seq = prompt.to_vec();
    let finished = |g: &GrammarState| match cfg.mode {
        Mode::MultiTrack => g.is_done(),
        Mode::BarFill => g.is_complete(),
    };
    while !finished(&g) {
        let admitted: Vec<u32> = g.valid_next().iter().collect();
        assert!(!admitted.is_empty(), "dead end after {} tokens", seq.len());
        let id = admitted[rng.random_range(0..admitted.len())];
        g.step(vocab, id).unwrap();
        seq.push(id);
    }
    TokenSeq { ids: seq, mode: cfg.mode, expressive: cfg.expressive, meters: cfg.meters }
}

fn random_meters(rng: &mut ChaCha8Rng) -> Vec<TimeSig> {
    (0..rng.random_range(1..=2))
        .map(|_| if rng.random_bool(0.8) { TimeSig::FOUR_FOUR } else { TimeSig::new(3, 4) })
        .collect()
}

#[test]
fn uniform_walks_decode_and_stop_on_time() {
    let vocab = Vocab::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..10_000 {
        let expressive = i % 2 == 1;
        if i % 4 < 2 {
            let n = rng.random_range(1..=3);
            let mut cfg = GrammarConfig::new(Mode::MultiTrack, expressive, random_meters(&mut rng));
            cfg.track_limit = Some(n);
            let seq = walk(&vocab, cfg, &[], &mut rng);
            assert_eq!(seq.ids.iter().filter(|&&id| id == ids::TRACK_END).count(), n);
            assert_eq!(*seq.ids.last().unwrap(), ids::TRACK_END);
            assert_eq!(decode(&seq, &vocab).unwrap().piece.tracks.len(), n);
        } else {
            let piece = random_piece(
                &mut rng,
                &SynthParams { tracks: 1..=3, bars: 1..=3, expressive, ..SynthParams::default() },
            );
            let k = rng.random_range(1..=piece.tracks.len() * piece.bar_count());
            let mut cells: Vec<(usize, usize)> =
                (0..piece.tracks.len()).flat_map(|t| (0..piece.bar_count()).map(move |b| (t, b))).collect();
            cells.shuffle(&mut rng);
            cells.truncate(k);
            let full =
                encode_barfill(&piece, &vocab, &cells, EncodeOptions { expressive, with_controls: false }).unwrap();
            let cut = full.ids.iter().position(|&id| id == ids::FILL_START).unwrap();
            let mut cfg = GrammarConfig::new(Mode::BarFill, expressive, piece.meters());
            cfg.track_limit = Some(piece.tracks.len());
            let seq = walk(&vocab, cfg, &full.ids[..cut], &mut rng);
            assert_eq!(seq.ids.iter().filter(|&&id| id == ids::FILL_END).count(), k);
            assert_eq!(*seq.ids.last().unwrap(), ids::FILL_END);
            assert_eq!(decode(&seq, &vocab).unwrap().mask.len(), k);
        }
    }
}

#[test]
fn sampler_generations_with_uniform_predictor() {
    let vocab = Vocab::new();
    let uniform = UniformPredictor::new(&vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..100 {
        let base = random_piece(&mut rng, &SynthParams { tracks: 1..=2, bars: 1..=2, ..SynthParams::default() });
        let params = SampleParams { seed, max_tokens: 1_000_000, n_bars: 2, ..SampleParams::default() };
        let out = generate_tracks(&base, 2, &[], &uniform, &vocab, &params).unwrap();
        assert_eq!(out.tracks.len(), base.tracks.len() + 2);
        assert_eq!(&out.tracks[..base.tracks.len()], &base.tracks[..]);
        out.validate().unwrap();

        let mask = [(0, 0)];
        let filled = infill_bars(&base, &mask, &uniform, &vocab, &params).unwrap();
        for (t, track) in base.tracks.iter().enumerate() {
            for (b, bar) in track.bars.iter().enumerate() {
                if (t, b) != (0, 0) {
                    assert_eq!(&filled.tracks[t].bars[b], bar);
                }
            }
        }
    }
}

#[test]
fn hard_polyphony_limit_holds() {
    let vocab = Vocab::new();
    let uniform = UniformPredictor::new(&vocab);
    for limit in [1u32, 2, 4] {
        for seed in 0..100 {
            let params =
                SampleParams { seed, l_poly: Some(limit), max_tokens: 1_000_000, n_bars: 2, ..SampleParams::default() };
            let out = generate_tracks(&Piece::default(), 1, &[], &uniform, &vocab, &params).unwrap();
            let max = out.tracks[0].polyphony_profile().into_iter().max().unwrap_or(0);
            assert!(max <= limit, "limit {limit} seed {seed}: {max}");
        }
    }
}
