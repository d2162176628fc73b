//! LLM dispatch with a content-addressed response cache, retries and
//! bounded parallelism.

mod backend;
mod cache;

pub use backend::{Backend, BackendError, FailOnDispatch, FnBackend, HttpChatBackend, LLM_API_KEY_ENV};
pub use cache::{cache_key, prompt_sha, CacheRecord, ReplayCache};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RelationOntology;
use crate::prompting::{parse_response, ParsedPrediction};
use crate::retry::RetryPolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("prompt has {tokens} tokens, limit is {limit}")]
    PromptTooLong { tokens: usize, limit: usize },
    #[error("no cached response for prompt {prompt_sha} in replay mode")]
    ReplayMiss { prompt_sha: String },
    #[error("backend failed: {0}")]
    Transport(String),
    #[error("response cache corrupted: {0}")]
    CacheCorruption(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_input_tokens: usize,
    pub max_output_tokens: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model_name: "gpt-4o-2024-05-13".into(),
            temperature: 0.0,
            max_input_tokens: 2048,
            max_output_tokens: 256,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err("temperature must be non-negative".into());
        }
        if self.max_input_tokens == 0 || self.max_output_tokens == 0 {
            return Err("token limits must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Live,
    #[default]
    Replay,
}

/// Whitespace tokens × 1.3, rounded up.
pub fn estimate_tokens(prompt: &str) -> usize {
    let words = prompt.split_whitespace().count();
    (words * 13).div_ceil(10)
}

pub struct Judge<'b> {
    pub backend: &'b dyn Backend,
    pub cache: ReplayCache,
    pub params: GenerationParams,
    pub mode: Mode,
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub response: String,
    pub cached: bool,
}

impl<'b> Judge<'b> {
    pub fn new(backend: &'b dyn Backend, cache: ReplayCache, params: GenerationParams, mode: Mode) -> Self {
        Self {
            backend,
            cache,
            params,
            mode,
            retry: RetryPolicy::default(),
        }
    }

    pub fn prompt_tokens(&self, prompt: &str) -> usize {
        self.backend
            .count_tokens(prompt)
            .unwrap_or_else(|| estimate_tokens(prompt))
    }

    /// Cache first; on a miss, dispatch (live mode only) and record.
    pub fn generate(&self, prompt: &str) -> Result<Generation, JudgeError> {
        if prompt.trim().is_empty() {
            return Err(JudgeError::EmptyPrompt);
        }
        let tokens = self.prompt_tokens(prompt);
        if tokens > self.params.max_input_tokens {
            return Err(JudgeError::PromptTooLong {
                tokens,
                limit: self.params.max_input_tokens,
            });
        }
        if let Some(response) = self.cache.get(prompt, &self.params)? {
            return Ok(Generation {
                response,
                cached: true,
            });
        }
        if self.mode == Mode::Replay {
            return Err(JudgeError::ReplayMiss {
                prompt_sha: prompt_sha(prompt),
            });
        }
        let response = self
            .retry
            .run(|| self.backend.complete(prompt, &self.params), |e| e.retryable)
            .map_err(|e| JudgeError::Transport(e.message))?;
        self.cache.insert(prompt, &self.params, &response)?;
        Ok(Generation {
            response,
            cached: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub query_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub query_id: String,
    pub prompt: String,
    pub response: Option<String>,
    /// NA (empty) when the query failed.
    pub prediction: ParsedPrediction,
    pub error: Option<String>,
    pub cached: bool,
}

/// Judges every job with up to `parallelism` workers. Output order follows
/// input order; a failing job becomes an NA record carrying the error.
pub fn run_batch(
    jobs: &[Job],
    judge: &Judge<'_>,
    ontology: &RelationOntology,
    parallelism: usize,
) -> Vec<BatchRecord> {
    let workers = parallelism.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<BatchRecord>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let record = judge_one(job, judge, ontology);
                slots.lock().expect("slots lock")[i] = Some(record);
            });
        }
    });
    slots
        .into_inner()
        .expect("slots lock")
        .into_iter()
        .map(|r| r.expect("every job produces a record"))
        .collect()
}

fn judge_one(job: &Job, judge: &Judge<'_>, ontology: &RelationOntology) -> BatchRecord {
    match judge.generate(&job.prompt) {
        Ok(g) => BatchRecord {
            query_id: job.query_id.clone(),
            prompt: job.prompt.clone(),
            prediction: parse_response(&g.response, ontology),
            response: Some(g.response),
            error: None,
            cached: g.cached,
        },
        Err(e) => {
            log::warn!("query {}: {e}", job.query_id);
            BatchRecord {
                query_id: job.query_id.clone(),
                prompt: job.prompt.clone(),
                response: None,
                prediction: ParsedPrediction {
                    relations: Default::default(),
                    raw_response: String::new(),
                    matched_lines: Vec::new(),
                },
                error: Some(e.to_string()),
                cached: false,
            }
        }
    }
}
