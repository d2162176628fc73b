use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cosine_sim, ProviderError};
use crate::retry::RetryPolicy;

pub const EMBED_API_KEY_ENV: &str = "HYDRE_EMBED_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

/// L2-normalized vectors of a single dimension, keyed by item id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

fn normalized(id: &str, v: Vec<f64>) -> Result<Vec<f64>, ProviderError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ProviderError::Invalid(format!("non-finite value in vector {id:?}")));
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(ProviderError::ZeroVector(id.to_owned()));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

impl EmbeddingIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_vectors(
        items: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, ProviderError> {
        let mut idx = Self::new();
        for (id, v) in items {
            idx.insert(id, v)?;
        }
        Ok(idx)
    }

    /// Normalizes and stores `v`. The first vector fixes the dimension.
    pub fn insert(&mut self, id: String, v: Vec<f64>) -> Result<(), ProviderError> {
        if v.is_empty() {
            return Err(ProviderError::Invalid(format!("empty vector for {id:?}")));
        }
        if self.vectors.is_empty() && self.dim == 0 {
            self.dim = v.len();
        } else if v.len() != self.dim {
            return Err(ProviderError::DimMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let v = normalized(&id, v)?;
        if self.vectors.insert(id.clone(), v).is_some() {
            return Err(ProviderError::Invalid(format!("duplicate embedding {id:?}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.vectors.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Result<&[f64], ProviderError> {
        self.vectors
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| ProviderError::MissingEmbedding(id.to_owned()))
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64, ProviderError> {
        self.similarity_to(self.vector(a)?, b)
    }

    pub(crate) fn similarity_to(&self, u: &[f64], id: &str) -> Result<f64, ProviderError> {
        cosine_sim(u, self.vector(id)?)
    }

    pub fn to_records(&self) -> Vec<EmbeddingRecord> {
        let mut ids: Vec<_> = self.vectors.keys().cloned().collect();
        ids.sort();
        ids.into_iter()
            .map(|id| EmbeddingRecord {
                vector: self.vectors[&id].clone(),
                id,
            })
            .collect()
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingIndex, ProviderError> {
    let mut idx = EmbeddingIndex::new();
    crate::corpus::read_jsonl(path, |line, r: EmbeddingRecord| {
        idx.insert(r.id, r.vector)
            .map_err(|e| crate::corpus::CorpusError::Invalid {
                context: format!("{}:{line}", path.display()),
                message: e.to_string(),
            })
    })?;
    Ok(idx)
}

/// A text encoder reachable over the network (or mocked in tests).
pub trait EmbeddingService: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// JSON-over-HTTP encoder: POST `{"texts": [...]}` → `{"vectors": [[...]]}`.
pub struct HttpEmbeddingService {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpEmbeddingService {
    /// Reads the bearer token from `HYDRE_EMBED_API_KEY` if set.
    pub fn new(url: impl Into<String>) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            api_key: std::env::var(EMBED_API_KEY_ENV).ok(),
            client,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, (bool, String)> {
        let mut req = self.client.post(&self.url).json(&EmbedRequest { texts });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, format!("HTTP {status}")));
        }
        let body: EmbedResponse = resp.json().map_err(|e| (false, e.to_string()))?;
        Ok(body.vectors)
    }
}

impl EmbeddingService for HttpEmbeddingService {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        self.retry
            .run(|| self.post(texts), |(retryable, _)| *retryable)
            .map_err(|(_, m)| ProviderError::Transport(m))
    }
}

/// Embeds every `(id, text)` not already in `index`, adds the normalized
/// vectors, and appends them to `cache_path` when given. Returns how many
/// items were fetched.
pub fn fetch_embeddings(
    items: &[(String, String)],
    service: &dyn EmbeddingService,
    index: &mut EmbeddingIndex,
    cache_path: Option<&Path>,
) -> Result<usize, ProviderError> {
    if items.is_empty() {
        return Err(ProviderError::Invalid("no texts to embed".into()));
    }
    let mut seen = std::collections::HashSet::new();
    let missing: Vec<&(String, String)> = items
        .iter()
        .filter(|(id, _)| !index.contains(id) && seen.insert(id.as_str()))
        .collect();
    if missing.is_empty() {
        return Ok(0);
    }
    let texts: Vec<String> = missing.iter().map(|(_, t)| t.clone()).collect();
    let vectors = service.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::Transport(format!(
            "asked for {} vectors, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    let dim = if index.is_empty() { vectors[0].len() } else { index.dim() };
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(ProviderError::DimMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    let mut staged = index.clone();
    let mut records = Vec::with_capacity(vectors.len());
    for ((id, _), v) in missing.iter().zip(vectors) {
        staged.insert(id.clone(), v)?;
        records.push(EmbeddingRecord {
            id: id.clone(),
            vector: staged.vector(id)?.to_vec(),
        });
    }
    if let Some(path) = cache_path {
        let io = |e: std::io::Error| ProviderError::Invalid(format!("{}: {e}", path.display()));
        let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        for r in &records {
            writeln!(f, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io)?;
        }
    }
    *index = staged;
    Ok(records.len())
}
