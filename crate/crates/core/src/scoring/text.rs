//! Bag-of-words text similarity: term-frequency vectors, smoothed TF-IDF and
//! cosine similarity.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sorted token → column map shared by every vector compared against each
/// other.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens.into_iter().map(Into::into).collect();
        Vocabulary {
            index: set.into_iter().enumerate().map(|(i, t)| (t, i)).collect(),
        }
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_tokens(texts.into_iter().flat_map(tokenize))
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }
}

/// Raw term counts; out-of-vocabulary tokens are ignored.
pub fn tf_vector(text: &str, vocabulary: &Vocabulary) -> Vec<f64> {
    let mut v = vec![0.0; vocabulary.len()];
    for token in tokenize(text) {
        if let Some(i) = vocabulary.get(&token) {
            v[i] += 1.0;
        }
    }
    v
}

/// TF-IDF weights fitted on a corpus, with smoothed
/// `idf = ln((1 + M) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    vocabulary: Vocabulary,
    idf: Vec<f64>,
}

impl TfIdf {
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let docs: Vec<BTreeSet<String>> = corpus
            .into_iter()
            .map(|d| tokenize(d).into_iter().collect())
            .collect();
        let vocabulary = Vocabulary::from_tokens(docs.iter().flatten().cloned());
        let m = docs.len() as f64;
        let mut df = vec![0usize; vocabulary.len()];
        for doc in &docs {
            for t in doc {
                df[vocabulary.get(t).expect("token from corpus")] += 1;
            }
        }
        let idf = df
            .iter()
            .map(|&d| ((1.0 + m) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        TfIdf { vocabulary, idf }
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn transform(&self, text: &str) -> Vec<f64> {
        let mut v = tf_vector(text, &self.vocabulary);
        for (x, w) in v.iter_mut().zip(&self.idf) {
            *x *= w;
        }
        v
    }
}

/// Fits TF-IDF on `corpus` and returns the vocabulary and one vector per
/// document.
pub fn tfidf_vectors(corpus: &[&str]) -> (Vocabulary, Vec<Vec<f64>>) {
    let model = TfIdf::fit(corpus.iter().copied());
    let vectors = corpus.iter().map(|d| model.transform(d)).collect();
    (model.vocabulary, vectors)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len(), "cosine similarity"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity("zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vectorizer {
    #[default]
    Tf,
    Tfidf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScoreFunctionConfig {
    #[serde(default)]
    pub vectorizer: Vectorizer,
}

/// Scores a generated text against a reference.
///
/// TF scoring builds its vocabulary from the two texts; TF-IDF scoring uses
/// the corpus it was constructed with (usually the baseline references).
#[derive(Debug, Clone)]
pub enum TextScorer {
    Tf,
    TfIdf(TfIdf),
}

impl TextScorer {
    pub fn new<'a>(
        cfg: &ScoreFunctionConfig,
        corpus: impl IntoIterator<Item = &'a str>,
    ) -> Self {
        match cfg.vectorizer {
            Vectorizer::Tf => TextScorer::Tf,
            Vectorizer::Tfidf => TextScorer::TfIdf(TfIdf::fit(corpus)),
        }
    }

    /// Cosine similarity in `[0, 1]`; texts sharing no scored token score 0.
    pub fn score(&self, generated: &str, reference: &str) -> Result<f64> {
        if generated.trim().is_empty() || reference.trim().is_empty() {
            return Err(Error::InvalidConfig("cannot score an empty text".into()));
        }
        let (a, b) = match self {
            TextScorer::Tf => {
                let vocab = Vocabulary::from_texts([generated, reference]);
                (tf_vector(generated, &vocab), tf_vector(reference, &vocab))
            }
            TextScorer::TfIdf(model) => (model.transform(generated), model.transform(reference)),
        };
        match cosine_similarity(&a, &b) {
            Ok(s) => Ok(s.clamp(0.0, 1.0)),
            Err(Error::UndefinedSimilarity(_)) => Ok(0.0),
            Err(e) => Err(e),
        }
    }
}

/// Similarity of `generated` to `reference` under `cfg`, with any TF-IDF
/// statistics fitted on the pair itself.
pub fn score_texts(generated: &str, reference: &str, cfg: &ScoreFunctionConfig) -> Result<f64> {
    TextScorer::new(cfg, [generated, reference]).score(generated, reference)
}

/// Plug point for the similarity used when screening decoded prompts.
pub trait TextSimilarity {
    fn similarity(&self, a: &str, b: &str) -> Result<f64>;
}

impl TextSimilarity for TextScorer {
    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        self.score(a, b)
    }
}

impl<F> TextSimilarity for F
where
    F: Fn(&str, &str) -> f64,
{
    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self(a, b))
    }
}
