use statrs::distribution::{ChiSquared, ContinuousCDF};
use trackfill_core::corpus::{bundled_minicorpus, load_dir};
use trackfill_core::predictor::{make_training_examples, PipelineParams, TrainingExample};
use trackfill_core::score::{slice_segment, Piece};
use trackfill_core::tokenizer::{decode, Vocab};

fn corpus() -> Vec<Piece> {
    load_dir(&bundled_minicorpus(), false).unwrap().into_iter().map(|f| f.piece).collect()
}

/// Pearson statistic p-value. Adjacent bins are pooled from the top until
/// every expected count is at least 5.
fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&oi, &ei) in observed.iter().zip(expected) {
        o += oi;
        e += ei;
        if e >= 5.0 {
            bins.push((o, e));
            (o, e) = (0.0, 0.0);
        }
    }
    if e > 0.0 || o > 0.0 {
        let last = bins.last_mut().unwrap();
        last.0 += o;
        last.1 += e;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (bins.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

fn draws(params: &PipelineParams) -> Vec<TrainingExample> {
    make_training_examples(&corpus(), &Vocab::new(), None, params, 10_000).unwrap()
}

#[test]
fn transpose_is_uniform() {
    let ex = draws(&PipelineParams { seed: 21, ..PipelineParams::default() });
    let mut observed = vec![0.0; 12];
    for e in &ex {
        observed[(e.transpose + 6) as usize] += 1.0;
    }
    let p = chi_square_p(&observed, &[ex.len() as f64 / 12.0; 12]);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn mask_size_is_uniform_given_its_ceiling() {
    let ex = draws(&PipelineParams { seed: 22, infill_probability: 1.0, ..PipelineParams::default() });
    let ceiling = |e: &TrainingExample| (e.track_order.len() * e.n_bars * 3) / 4;
    let top = ex.iter().map(ceiling).max().unwrap();
    let mut observed = vec![0.0; top + 1];
    let mut expected = vec![0.0; top + 1];
    for e in &ex {
        observed[e.mask_size] += 1.0;
        let c = ceiling(e);
        for slot in &mut expected[..=c] {
            *slot += 1.0 / (c + 1) as f64;
        }
    }
    let p = chi_square_p(&observed, &expected);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn drums_are_never_transposed() {
    let corpus = corpus();
    let vocab = Vocab::new();
    let params = PipelineParams { seed: 23, infill_probability: 0.0, ..PipelineParams::default() };
    let ex = make_training_examples(&corpus, &vocab, None, &params, 2000).unwrap();
    let mut drums_seen = 0;
    for e in ex.iter().filter(|e| e.transpose != 0) {
        let source = slice_segment(&corpus[e.piece_index], e.start_bar, e.n_bars, &e.track_order).unwrap();
        let decoded = decode(&e.seq, &vocab).unwrap().piece;
        for (src, got) in source.tracks.iter().zip(&decoded.tracks) {
            if src.program.is_drum() {
                drums_seen += 1;
                assert_eq!(src.bars, got.bars);
            }
        }
    }
    assert!(drums_seen > 100);
}

#[test]
fn fixed_seed_is_byte_reproducible() {
    let params = PipelineParams { seed: 5, ..PipelineParams::default() };
    let a = serde_json::to_vec(&make_training_examples(&corpus(), &Vocab::new(), None, &params, 500).unwrap()).unwrap();
    let b = serde_json::to_vec(&make_training_examples(&corpus(), &Vocab::new(), None, &params, 500).unwrap()).unwrap();
    assert_eq!(a, b);
}
