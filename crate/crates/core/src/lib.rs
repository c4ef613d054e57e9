//! Multi-track symbolic music modelling: score model, MIDI I/O, tokenization,
//! attribute controls, grammar-masked sampling and originality evaluation.

pub mod controls;
pub mod corpus;
pub mod eval;
pub mod midi;
pub mod predictor;
pub mod sampler;
pub mod score;
pub mod synth;
pub mod tokenizer;
