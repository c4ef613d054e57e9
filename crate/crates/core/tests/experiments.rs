use std::sync::Arc;

use trackfill_core::controls::build_density_table;
use trackfill_core::corpus::{bundled_minicorpus, load_dir, pieces_in};
use trackfill_core::eval::experiments::{
    attribute_control_experiment, corpus_originality_experiment, infilling_originality_experiment, write_csv,
    ControlKind, InfillSetup, PredictorFactory, TrialStatus,
};
use trackfill_core::eval::search::{CorpusIndex, DEFAULT_PREFILTER};
use trackfill_core::eval::stats::default_edges;
use trackfill_core::predictor::stub::{EchoControlsPredictor, ScriptedPredictor};
use trackfill_core::predictor::{make_training_examples, NGramModel, PipelineParams, Split, TokenPredictor};
use trackfill_core::sampler::SampleParams;
use trackfill_core::score::Piece;
use trackfill_core::tokenizer::{encode_barfill, EncodeOptions, Vocab};

fn split(s: Split) -> Vec<Piece> {
    pieces_in(&load_dir(&bundled_minicorpus(), false).unwrap(), s)
}

#[test]
fn density_closed_loop_with_echo_stub_is_exact() {
    let train = split(Split::Train);
    let table = build_density_table(&train).unwrap();
    let vocab = Vocab::new();
    let stub = EchoControlsPredictor::new(&vocab, table.clone());
    let params = SampleParams { with_controls: true, max_tokens: 100_000, ..SampleParams::default() };
    let report =
        attribute_control_experiment(ControlKind::Density, 100, &stub, &vocab, &table, &train, &params, 1).unwrap();
    assert_eq!(report.rows.len(), 100);
    assert!(report.rows.iter().all(|r| r.abs_diff == Some(0)), "{:?}", report.rows);
    assert_eq!(report.summary[0].trials, 100);
}

#[test]
fn range_controls_with_ngram_emit_summaries() {
    let train = split(Split::Train);
    let table = build_density_table(&train).unwrap();
    let vocab = Vocab::new();
    let ex = make_training_examples(&train, &vocab, Some(&table), &PipelineParams::default(), 300).unwrap();
    let seqs: Vec<Vec<u32>> = ex.into_iter().map(|e| e.seq.ids).collect();
    let model = NGramModel::train(&vocab, &seqs, 4, 0.01).unwrap();
    let params = SampleParams { with_controls: true, max_tokens: 20_000, ..SampleParams::default() };
    for kind in [ControlKind::Duration, ControlKind::Polyphony] {
        let report = attribute_control_experiment(kind, 10, &model, &vocab, &table, &train, &params, 2).unwrap();
        assert_eq!(report.rows.len(), 10);
        for r in report.rows.iter().filter(|r| r.status == TrialStatus::Ok) {
            assert!(r.percent_inside.is_none_or(|p| (0.0..=100.0).contains(&p)));
        }
        let mut buf = Vec::new();
        write_csv(&report.summary, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("condition,trials,percent_of_trials"));
    }
}

#[test]
fn replaying_the_original_is_jaccard_one_and_corpus_distance_zero() {
    let vocab = Vocab::new();
    let test = split(Split::Test);
    let replay: &PredictorFactory = &|segment: &Piece, mask: &[(usize, usize)]| {
        let seq = encode_barfill(segment, &vocab, mask, EncodeOptions::default()).unwrap();
        Arc::new(ScriptedPredictor::new(&vocab, seq.ids)) as Arc<dyn TokenPredictor>
    };
    let params = SampleParams { max_tokens: 20_000, ..SampleParams::default() };
    let setup = InfillSetup {
        pieces: &test,
        n_bars: 2,
        trials: 12,
        predictor: replay,
        vocab: &vocab,
        params: &params,
        table: None,
        seed: 3,
    };
    let report = infilling_originality_experiment(&setup, &default_edges()).unwrap();
    assert!(report.rows.iter().all(|r| r.jaccard == Some(1.0)), "{:?}", report.rows);
    assert_eq!(report.histogram[9].count, 12);

    let files = load_dir(&bundled_minicorpus(), false).unwrap();
    let index = CorpusIndex::build(files.iter().map(|f| (f.name.as_str(), &f.piece)));
    let setup = InfillSetup { n_bars: 1, trials: 6, seed: 4, ..setup };
    let originality =
        corpus_originality_experiment(&setup, &index, Some(DEFAULT_PREFILTER), 0.0, &default_edges()).unwrap();
    assert!(originality.rows.iter().all(|r| r.distance == Some(0.0) && r.matched));
}
