use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackfill_core::corpus::{bundled_minicorpus, load_dir};
use trackfill_core::midi::{onset_ticks, parse_midi, quantize_onset, write_midi};
use trackfill_core::score::{Piece, DEFAULT_TPQ, MICRO_MAX, MICRO_MIN};
use trackfill_core::synth::{random_piece, SynthParams};
use trackfill_core::tokenizer::{decode, encode_barfill, encode_multitrack, EncodeOptions, Mode, Vocab};

fn random_mask(rng: &mut ChaCha8Rng, piece: &Piece) -> Vec<(usize, usize)> {
    let mut cells: Vec<(usize, usize)> =
        (0..piece.tracks.len()).flat_map(|t| (0..piece.bar_count()).map(move |b| (t, b))).collect();
    cells.shuffle(rng);
    let k = rng.random_range(1..=cells.len());
    cells.truncate(k);
    cells
}

/// Token streams carry no tick resolution, so decoding restores the default.
fn check_both_modes(piece: &Piece, expressive: bool, seed: u64) {
    let piece = &Piece { ticks_per_quarter: DEFAULT_TPQ, ..piece.clone() };
    let vocab = Vocab::new();
    let opts = EncodeOptions { expressive, with_controls: false };
    let seq = encode_multitrack(piece, &vocab, opts).unwrap();
    assert_eq!(seq.mode, Mode::MultiTrack);
    assert_eq!(&decode(&seq, &vocab).unwrap().piece, piece);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = random_mask(&mut rng, piece);
    let seq = encode_barfill(piece, &vocab, &mask, opts).unwrap();
    let d = decode(&seq, &vocab).unwrap();
    assert_eq!(&d.piece, piece);
    let mut sorted = mask.clone();
    sorted.sort_unstable();
    assert_eq!(d.mask, sorted);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_pieces_round_trip(seed in any::<u64>(), expressive in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let piece = random_piece(&mut rng, &SynthParams { expressive, ..SynthParams::default() });
        check_both_modes(&piece, expressive, seed);
    }

    #[test]
    fn midi_write_parse_is_idempotent(seed in any::<u64>(), tpq_index in 0usize..4) {
        let tpq = [96u16, 384, 480, 960][tpq_index];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let piece = random_piece(
            &mut rng,
            &SynthParams { expressive: true, ticks_per_quarter: tpq, ..SynthParams::default() },
        );
        let once = parse_midi(&write_midi(&piece, true), true).unwrap();
        let twice = parse_midi(&write_midi(&once, true), true).unwrap();
        prop_assert_eq!(&once, &twice);
        // Quantized content never depends on microtiming.
        let plain = parse_midi(&write_midi(&piece, true), false).unwrap();
        prop_assert_eq!(plain.note_count(), piece.note_count());
    }
}

#[test]
fn corpus_pieces_round_trip() {
    let files = load_dir(&bundled_minicorpus(), false).unwrap();
    for (i, f) in files.iter().enumerate() {
        check_both_modes(&f.piece, false, i as u64);
    }
    let expressive = load_dir(&bundled_minicorpus(), true).unwrap();
    for (i, f) in expressive.iter().enumerate() {
        check_both_modes(&f.piece, true, i as u64);
    }
}

#[test]
fn tick_scan_reconstructs_within_half_a_unit() {
    for tpq in [96u16, 384, 480, 960] {
        let q = i64::from(tpq);
        for t in 0..(8 * u64::from(tpq)) {
            let o = quantize_onset(t, tpq);
            assert!((MICRO_MIN..=MICRO_MAX).contains(&o.micro), "tpq {tpq} tick {t}: {o:?}");
            // Compare in units of 1/(320 * tpq) steps: |recon - exact| <= 1/320 step.
            let recon = (160 * i64::from(o.step) + i64::from(o.micro)) * 2 * q;
            let exact = 320 * 12 * t as i64;
            assert!((recon - exact).abs() <= q, "tpq {tpq} tick {t}: {o:?}");
            assert_eq!(onset_ticks(o.step, o.micro, tpq), t);
        }
    }
}
