//! Where scores come from: text similarity, synthetic ground truth and the
//! language-model evaluator.

mod llm;
mod synthetic;
mod text;

pub use llm::{
    http_request_count, BaselinePair, BaselineSet, ChatMessage, ChatRequest, ChatResponse,
    EvaluatorTraceRow, HttpTransport, LlmEvaluator, LlmEvaluatorConfig, Transport,
};
pub use synthetic::{Landscape, Peak, SyntheticLatentOracle, SyntheticOracle};
pub use text::{
    cosine_similarity, score_texts, tf_vector, tfidf_vectors, tokenize, ScoreFunctionConfig,
    TextScorer, TextSimilarity, TfIdf, Vectorizer, Vocabulary,
};

use crate::error::OracleError;

/// Noisy score source indexed by candidate.
pub trait Oracle {
    fn num_candidates(&self) -> usize;
    fn evaluate(&mut self, candidate: usize) -> Result<f64, OracleError>;
}

/// Noisy score source over the continuous latent space.
pub trait LatentOracle {
    fn evaluate_latent(&mut self, x: &[f64]) -> Result<f64, OracleError>;
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn num_candidates(&self) -> usize {
        (**self).num_candidates()
    }

    fn evaluate(&mut self, candidate: usize) -> Result<f64, OracleError> {
        (**self).evaluate(candidate)
    }
}

impl<O: Oracle + ?Sized> Oracle for Box<O> {
    fn num_candidates(&self) -> usize {
        (**self).num_candidates()
    }

    fn evaluate(&mut self, candidate: usize) -> Result<f64, OracleError> {
        (**self).evaluate(candidate)
    }
}
