//! Next-token probability sources and training data preparation.

pub mod ngram;
pub mod pipeline;
pub mod stub;

use thiserror::Error;

use crate::tokenizer::Vocab;

pub use ngram::NGramModel;
pub use pipeline::{make_training_examples, split_of, PipelineParams, Split, TrainingExample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("predictor failed: {0}")]
    Failed(String),
    #[error("distribution has {got} entries, vocabulary has {want}")]
    Size { got: usize, want: usize },
}

/// A model of p(next token | prefix). Implementations answer read-only
/// queries and may be shared across generation sessions.
pub trait TokenPredictor: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Probability vector over the vocabulary for the token after `prefix`.
    fn next_distribution(&self, prefix: &[u32]) -> Result<Vec<f64>, PredictorError>;
}

impl<P: TokenPredictor + ?Sized> TokenPredictor for &P {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_distribution(&self, prefix: &[u32]) -> Result<Vec<f64>, PredictorError> {
        (**self).next_distribution(prefix)
    }
}

impl<P: TokenPredictor + ?Sized> TokenPredictor for Box<P> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_distribution(&self, prefix: &[u32]) -> Result<Vec<f64>, PredictorError> {
        (**self).next_distribution(prefix)
    }
}

impl<P: TokenPredictor + ?Sized> TokenPredictor for std::sync::Arc<P> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_distribution(&self, prefix: &[u32]) -> Result<Vec<f64>, PredictorError> {
        (**self).next_distribution(prefix)
    }
}

#[derive(Clone, Debug)]
pub struct UniformPredictor {
    size: usize,
}

impl UniformPredictor {
    pub fn new(vocab: &Vocab) -> Self {
        UniformPredictor { size: vocab.size() }
    }
}

pub fn uniform_predictor(vocab: &Vocab) -> UniformPredictor {
    UniformPredictor::new(vocab)
}

impl TokenPredictor for UniformPredictor {
    fn vocab_size(&self) -> usize {
        self.size
    }

    fn next_distribution(&self, _prefix: &[u32]) -> Result<Vec<f64>, PredictorError> {
        Ok(vec![1.0 / self.size as f64; self.size])
    }
}

/// Mean negative log-likelihood per token, exponentiated. Each sequence is
/// scored from its second token on, the first being the fixed start token.
pub fn perplexity<P: TokenPredictor + ?Sized>(predictor: &P, seqs: &[Vec<u32>]) -> Result<f64, PredictorError> {
    let mut nll = 0.0;
    let mut n = 0usize;
    for seq in seqs {
        for i in 1..seq.len() {
            let dist = predictor.next_distribution(&seq[..i])?;
            let p = dist.get(seq[i] as usize).copied().unwrap_or(0.0);
            nll -= p.ln();
            n += 1;
        }
    }
    if n == 0 {
        return Err(PredictorError::Failed("no tokens to score".into()));
    }
    Ok((nll / n as f64).exp())
}
