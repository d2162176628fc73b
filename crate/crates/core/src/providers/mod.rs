//! Confidence scores and semantic similarity, and the stage-2 bag score that
//! combines them.

mod embeddings;
mod scores;

pub use embeddings::{
    fetch_embeddings, load_embeddings, EmbeddingIndex, EmbeddingRecord, EmbeddingService,
    HttpEmbeddingService, EMBED_API_KEY_ENV,
};
pub use scores::{load_scores, save_scores, ScoreManifest, ScoreMatrix, ScoreRecord};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Bag, CorpusError, RelationId};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no score row for {0:?}")]
    MissingScores(String),
    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("zero vector for {0:?}")]
    ZeroVector(String),
    #[error("{0}")]
    Invalid(String),
    #[error("embedding service: {0}")]
    Transport(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Max,
    Mean,
}

/// Knobs for the three selection stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub w_sim: f64,
    pub w_conf: f64,
    /// Coverage threshold; a sentence covers a label when its score is
    /// strictly greater than this.
    pub threshold: f64,
    /// Number of candidate relations (and exemplars).
    pub k: usize,
    pub bag_sim_pooling: Pooling,
    pub seed: u64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            w_sim: 1.0,
            w_conf: 1.0,
            threshold: 0.5,
            k: 5,
            bag_sim_pooling: Pooling::Max,
            seed: 42,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: &str| Err(ProviderError::Invalid(m.to_owned()));
        if !(self.w_sim >= 0.0 && self.w_conf >= 0.0) {
            return bad("weights must be non-negative");
        }
        if self.w_sim + self.w_conf <= 0.0 {
            return bad("w_sim + w_conf must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        Ok(())
    }

    /// No confidence model in play: candidates come from bag labelsets and
    /// in-bag sentences are drawn at random.
    pub fn similarity_only(&self) -> bool {
        self.w_conf == 0.0
    }
}

/// Cosine similarity rescaled from [-1, 1] to [0, 1].
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, ProviderError> {
    if u.len() != v.len() {
        return Err(ProviderError::DimMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(ProviderError::ZeroVector(String::new()));
    }
    let cos = (dot / (nu * nv)).clamp(-1.0, 1.0);
    Ok((1.0 + cos) / 2.0)
}

/// Pooled similarity between a query and the sentences of a bag.
pub fn bag_similarity(
    query_id: &str,
    bag: &Bag,
    embeddings: &EmbeddingIndex,
    pooling: Pooling,
) -> Result<f64, ProviderError> {
    let q = embeddings.vector(query_id)?;
    let mut best = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for s in &bag.sentences {
        let sim = embeddings.similarity_to(q, &s.sentence_id)?;
        best = best.max(sim);
        sum += sim;
    }
    Ok(match pooling {
        Pooling::Max => best,
        Pooling::Mean => sum / bag.sentences.len() as f64,
    })
}

/// Max-pooled confidence of `r` over the bag's sentences.
pub fn bag_confidence(bag: &Bag, r: RelationId, scores: &ScoreMatrix) -> Result<f64, ProviderError> {
    bag.sentences
        .iter()
        .map(|s| scores.score(&s.sentence_id, r))
        .try_fold(f64::NEG_INFINITY, |acc, x| x.map(|x| acc.max(x)))
}

/// `w_sim * bag_similarity + w_conf * bag_confidence`. A component with zero
/// weight is not computed, so its provider may be absent.
pub fn combined_bag_score(
    query_id: &str,
    bag: &Bag,
    r: RelationId,
    scores: Option<&ScoreMatrix>,
    embeddings: Option<&EmbeddingIndex>,
    config: &ScoringConfig,
) -> Result<f64, ProviderError> {
    let mut total = 0.0;
    if config.w_sim > 0.0 {
        let emb = embeddings
            .ok_or_else(|| ProviderError::Invalid("similarity weight set but no embeddings".into()))?;
        total += config.w_sim * bag_similarity(query_id, bag, emb, config.bag_sim_pooling)?;
    }
    if config.w_conf > 0.0 {
        let sc = scores
            .ok_or_else(|| ProviderError::Invalid("confidence weight set but no scores".into()))?;
        total += config.w_conf * bag_confidence(bag, r, sc)?;
    }
    Ok(total)
}
