//! Run configuration: one TOML file plus command-line overrides.
//!
//! Precedence is flags, then file, then built-in defaults. Relative paths in
//! a config file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::{GenerationParams, Mode};
use crate::pipeline::{BaselineConfig, Strategy};
use crate::prompting::PromptTemplate;
use crate::providers::ScoringConfig;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_PARALLELISM: usize = 4;
pub const DEFAULT_LLM_URL: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub ontology: Option<PathBuf>,
    pub bags: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// LLM response cache (JSONL).
    pub cache: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            ontology: None,
            bags: None,
            queries: None,
            scores: None,
            embeddings: None,
            cache: None,
            output: PathBuf::from("out"),
        }
    }
}

impl Paths {
    fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.ontology,
            &mut self.bags,
            &mut self.queries,
            &mut self.scores,
            &mut self.embeddings,
            &mut self.cache,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    /// Governs every seeded choice; copied into `scoring.seed`.
    pub seed: u64,
    pub parallelism: usize,
    pub mode: Mode,
    pub llm_url: String,
    /// Relation-name pairs reported by the confusion summary.
    pub confusion_pairs: Vec<(String, String)>,
    pub paths: Paths,
    pub scoring: ScoringConfig,
    pub baseline: BaselineConfig,
    pub generation: GenerationParams,
    pub template: PromptTemplate,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Hydre,
            seed: DEFAULT_SEED,
            parallelism: DEFAULT_PARALLELISM,
            mode: Mode::Replay,
            llm_url: DEFAULT_LLM_URL.into(),
            confusion_pairs: Vec::new(),
            paths: Paths::default(),
            scoring: ScoringConfig::default(),
            baseline: BaselineConfig::default(),
            generation: GenerationParams::default(),
            template: PromptTemplate::default(),
        }
    }
}

/// Values given on the command line; `None` leaves the file value alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
    pub k: Option<usize>,
    pub mode: Option<Mode>,
    pub parallelism: Option<usize>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_owned(),
            message: e.to_string(),
        })
    }

    /// Reads `path`, resolving its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve_against(base);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.strategy {
            self.strategy = v;
        }
        if let Some(v) = o.k {
            self.scoring.k = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = o.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = &o.output {
            self.paths.output = v.clone();
        }
        self.scoring.seed = self.seed;
    }

    /// Checks value ranges only; file existence is checked when inputs load.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.scoring.validate().map_err(|e| invalid(&e))?;
        self.generation.validate().map_err(|e| invalid(&e))?;
        self.template.validate().map_err(|e| invalid(&e))?;
        if !(0.0..=1.0).contains(&self.baseline.mmr_alpha) {
            return Err(ConfigError::Invalid("baseline.mmr_alpha must lie in [0, 1]".into()));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid("parallelism must be at least 1".into()));
        }
        Ok(())
    }

    /// Path that must be configured, or a validation error naming the key.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, ConfigError> {
        path.as_deref()
            .ok_or_else(|| ConfigError::Invalid(format!("paths.{key} is not configured")))
    }
}

/// Parses a `--k` value: a single `5`, or an inclusive sweep `1..20`
/// (also `1..=20`).
pub fn parse_k_spec(s: &str) -> Result<Vec<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad k value {t:?}"));
    let ks = match s.split_once("..") {
        None => vec![num(s)?],
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?);
            if a > b {
                return Err(format!("empty k range {s:?}"));
            }
            (a..=b).collect()
        }
    };
    if ks.contains(&0) {
        return Err("k must be at least 1".into());
    }
    Ok(ks)
}
