//! The `hydre` command line: `validate`, `select`, `run` and `eval`.
//!
//! Exit codes: 0 success, 1 validation failure (bad config or inputs),
//! 2 runtime failure (LLM errors, unwritable output).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_k_spec, ConfigError, Overrides, RunConfig};
use crate::corpus::{
    load_queries, read_jsonl, write_jsonl, Corpus, CorpusError, QueryInstance, RelationOntology,
};
use crate::evaluation::{
    confusion_csv, confusion_pairs, mcnemar, paired_records, per_relation_csv, recall_csv, recall_curve,
    score, summary_table, EvalReport, Labelling,
};
use crate::judge::{
    estimate_tokens, run_batch, Backend, FailOnDispatch, HttpChatBackend, Job, Judge, Mode, ReplayCache,
};
use crate::pipeline::{render_selection, Selection, SelectionInputs, SelectionRecord, Strategy};
use crate::providers::{load_embeddings, load_scores, EmbeddingIndex, ScoreMatrix};
use crate::selection::Providers;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "live" => Ok(Mode::Live),
        "replay" => Ok(Mode::Replay),
        _ => Err(format!("unknown mode {s:?} (expected live or replay)")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "hydre", version, about = "Exemplar selection, prompting and scoring for relation extraction")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// hydre, reduced_bag, zero_shot, random_k, topk_sim, mmr or ablation:<variant>.
    #[arg(long, global = true)]
    pub strategy: Option<Strategy>,
    /// Number of exemplars, or an inclusive sweep such as `1..20`.
    #[arg(long, global = true)]
    pub k: Option<String>,
    #[arg(long, global = true, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load every input, check cross-references and print counts.
    Validate,
    /// Write one selection record per query.
    Select,
    /// Render prompts, query the judge and write predictions.
    Run {
        /// Precomputed selections to use instead of selecting afresh.
        #[arg(long)]
        selections: Option<PathBuf>,
    },
    /// Score predictions against the gold labels of the query file.
    Eval {
        /// Predictions to score (default: <output>/predictions.jsonl).
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Second system's predictions, compared with McNemar's test.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolved configuration plus the list of k values to run.
pub fn resolve_config(cli: &Cli) -> Result<(RunConfig, Vec<usize>), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ks = match &cli.k {
        Some(spec) => parse_k_spec(spec).map_err(invalid)?,
        None => vec![cfg.scoring.k],
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        strategy: cli.strategy,
        k: Some(ks[0]),
        mode: cli.mode,
        parallelism: cli.parallelism,
        output: cli.output.clone(),
    });
    cfg.validate()?;
    Ok((cfg, ks))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let (cfg, ks) = resolve_config(cli)?;
    let sweep = ks.len() > 1;
    let per_k = |k: usize| {
        let mut c = cfg.clone();
        c.scoring.k = k;
        if sweep {
            c.paths.output = cfg.paths.output.join(format!("k{k}"));
        }
        c
    };
    match &cli.command {
        Command::Validate => {
            let report = cmd_validate(&cfg)?;
            print!("{report}");
        }
        Command::Select => {
            for &k in &ks {
                let c = per_k(k);
                let n = cmd_select(&c)?;
                println!("wrote {n} selections to {}", c.paths.output.display());
            }
        }
        Command::Run { selections } => {
            let backend = make_backend(&cfg)?;
            for &k in &ks {
                let c = per_k(k);
                let summary = cmd_run(&c, selections.as_deref(), backend.as_ref())?;
                println!("{summary}");
            }
        }
        Command::Eval { predictions, baseline } => {
            if predictions.is_some() {
                let report = cmd_eval(&cfg, predictions.as_deref(), baseline.as_deref())?;
                print!("{}", summary_table(&report, &cfg.strategy.to_string()));
            } else {
                for &k in &ks {
                    let c = per_k(k);
                    let report = cmd_eval(&c, None, baseline.as_deref())?;
                    print!("{}", summary_table(&report, &format!("{} k={k}", c.strategy)));
                }
            }
        }
    }
    Ok(())
}

/// Dispatching backend for `cfg.mode`: a refusing stub in replay mode, the
/// HTTP chat backend in live mode (which needs the API key up front).
pub fn make_backend(cfg: &RunConfig) -> Result<Box<dyn Backend>, CliError> {
    match cfg.mode {
        Mode::Replay => Ok(Box::new(FailOnDispatch::default())),
        Mode::Live => Ok(Box::new(
            HttpChatBackend::from_env(cfg.llm_url.clone()).map_err(|e| invalid(e.message))?,
        )),
    }
}

/// Everything loaded from disk for one run.
pub struct Inputs {
    pub corpus: Corpus,
    pub queries: Vec<QueryInstance>,
    pub scores: Option<ScoreMatrix>,
    pub embeddings: Option<EmbeddingIndex>,
}

impl Inputs {
    pub fn providers(&self) -> Providers<'_> {
        Providers::new(self.scores.as_ref(), self.embeddings.as_ref())
    }

    pub fn gold(&self) -> Labelling {
        self.queries.iter().map(|q| (q.query_id.clone(), q.gold.clone())).collect()
    }
}

fn corpus_err(e: CorpusError) -> CliError {
    invalid(e)
}

/// Loads every configured input and checks that each sentence and query
/// the strategy will touch has the scores and embeddings it needs.
pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs, CliError> {
    let p = &cfg.paths;
    let corpus = Corpus::load(cfg.require(&p.ontology, "ontology")?, cfg.require(&p.bags, "bags")?)
        .map_err(corpus_err)?;
    let queries = load_queries(cfg.require(&p.queries, "queries")?, &corpus.ontology).map_err(corpus_err)?;
    for q in &queries {
        if corpus.sentence(&q.query_id).is_some() {
            return Err(invalid(format!("query id {:?} is also a training sentence id", q.query_id)));
        }
    }
    let need_scores = cfg.strategy.needs_scores(&cfg.scoring);
    let need_emb = cfg.strategy.needs_embeddings(&cfg.scoring);
    let scores = match &p.scores {
        Some(path) => Some(load_scores(path, &corpus.ontology).map_err(invalid)?),
        None if need_scores => return Err(invalid(format!("strategy {} needs paths.scores", cfg.strategy))),
        None => None,
    };
    let embeddings = match &p.embeddings {
        Some(path) => Some(load_embeddings(path).map_err(invalid)?),
        None if need_emb => return Err(invalid(format!("strategy {} needs paths.embeddings", cfg.strategy))),
        None => None,
    };
    let ids = || {
        corpus
            .bags
            .iter()
            .flat_map(|b| b.sentences.iter().map(move |s| (s.sentence_id.as_str(), Some(b.bag_id.as_str()))))
            .chain(queries.iter().map(|q| (q.query_id.as_str(), None)))
    };
    let describe = |id: &str, bag: Option<&str>| match bag {
        Some(b) => format!("sentence {id:?} (bag {b:?})"),
        None => format!("query {id:?}"),
    };
    if need_scores {
        let m = scores.as_ref().expect("checked above");
        if let Some((id, bag)) = ids().find(|(id, _)| !m.contains(id)) {
            return Err(invalid(format!("{} has no confidence scores", describe(id, bag))));
        }
    }
    if need_emb {
        let m = embeddings.as_ref().expect("checked above");
        if let Some((id, bag)) = ids().find(|(id, _)| !m.contains(id)) {
            return Err(invalid(format!("{} has no embedding", describe(id, bag))));
        }
    }
    Ok(Inputs {
        corpus,
        queries,
        scores,
        embeddings,
    })
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<String, CliError> {
    let inputs = load_inputs(cfg)?;
    let c = &inputs.corpus;
    let na_queries = inputs.queries.iter().filter(|q| q.is_na()).count();
    let mut out = String::from("OK\n");
    out.push_str(&format!("relations: {}\n", c.ontology.len()));
    out.push_str(&format!("bags: {} ({:.1}% NA)\n", c.bags.len(), 100.0 * c.na_fraction()));
    out.push_str(&format!("sentences: {}\n", c.num_sentences()));
    out.push_str(&format!("queries: {} ({na_queries} NA)\n", inputs.queries.len()));
    if let Some(s) = &inputs.scores {
        out.push_str(&format!("scored items: {}\n", s.len()));
    }
    if let Some(e) = &inputs.embeddings {
        out.push_str(&format!("embedded items: {} (dim {})\n", e.len(), e.dim()));
    }
    out.push_str(&format!("strategy: {}\n", cfg.strategy));
    Ok(out)
}

/// Contents of `metadata.json`, enough to repeat the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub strategy: String,
    pub k: usize,
    /// sha256 of each input file that exists.
    pub inputs: BTreeMap<String, String>,
    pub config: RunConfig,
}

fn sha256_file(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| hex::encode(Sha256::digest(b)))
}

pub fn write_metadata(cfg: &RunConfig, command: &str) -> Result<(), CliError> {
    let p = &cfg.paths;
    let inputs = [
        ("ontology", &p.ontology),
        ("bags", &p.bags),
        ("queries", &p.queries),
        ("scores", &p.scores),
        ("embeddings", &p.embeddings),
        ("cache", &p.cache),
    ]
    .into_iter()
    .filter_map(|(k, v)| Some((k.to_owned(), sha256_file(v.as_deref()?)?)))
    .collect();
    let meta = RunMetadata {
        command: command.to_owned(),
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: cfg.seed,
        strategy: cfg.strategy.to_string(),
        k: cfg.scoring.k,
        inputs,
        config: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(runtime)? + "\n";
    write_file(&p.output.join("metadata.json"), &text)
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    }
    write_jsonl(path, records).map_err(runtime)
}

pub fn select_all(cfg: &RunConfig, inputs: &Inputs) -> Result<Vec<Selection>, CliError> {
    let sel = SelectionInputs::new(
        &inputs.corpus,
        inputs.providers(),
        cfg.scoring.clone(),
        cfg.baseline.clone(),
    );
    inputs
        .queries
        .iter()
        .map(|q| {
            sel.select(cfg.strategy, &q.query_id)
                .map_err(|e| runtime(format!("query {:?}: {e}", q.query_id)))
        })
        .collect()
}

fn selection_records(selections: &[Selection], ontology: &RelationOntology) -> Vec<SelectionRecord> {
    selections.iter().map(|s| s.to_record(ontology)).collect()
}

/// Writes `selections.jsonl` and `metadata.json`; returns the query count.
pub fn cmd_select(cfg: &RunConfig) -> Result<usize, CliError> {
    let inputs = load_inputs(cfg)?;
    let selections = select_all(cfg, &inputs)?;
    write_records(
        &cfg.paths.output.join("selections.jsonl"),
        &selection_records(&selections, &inputs.corpus.ontology),
    )?;
    write_metadata(cfg, "select")?;
    Ok(selections.len())
}

pub fn load_selections(path: &Path, inputs: &Inputs) -> Result<Vec<Selection>, CliError> {
    let mut by_query = BTreeMap::new();
    read_jsonl(path, |line, r: SelectionRecord| {
        let s = r.into_selection(&inputs.corpus.ontology).map_err(|e| CorpusError::Invalid {
            context: format!("{}:{line}", path.display()),
            message: e.to_string(),
        })?;
        by_query.insert(s.query_id.clone(), s);
        Ok(())
    })
    .map_err(invalid)?;
    inputs
        .queries
        .iter()
        .map(|q| {
            by_query
                .remove(&q.query_id)
                .ok_or_else(|| invalid(format!("{}: no selection for query {:?}", path.display(), q.query_id)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub query_id: String,
    pub prompt: String,
    pub response: Option<String>,
}

/// Line record of a predictions file. NA is written as `["NA"]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub relations: Vec<String>,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn load_predictions(path: &Path, ontology: &RelationOntology) -> Result<Labelling, CliError> {
    let mut out = Labelling::new();
    read_jsonl(path, |line, r: PredictionRecord| {
        let ctx = || format!("{}:{line}", path.display());
        let labels = ontology.resolve_labels(&r.relations).map_err(|m| CorpusError::Invalid {
            context: ctx(),
            message: m,
        })?;
        if out.insert(r.query_id.clone(), labels).is_some() {
            return Err(CorpusError::Invalid {
                context: ctx(),
                message: format!("duplicate prediction for {:?}", r.query_id),
            });
        }
        Ok(())
    })
    .map_err(invalid)?;
    Ok(out)
}

/// Selects (or loads selections), renders prompts, judges them and writes
/// `selections.jsonl`, `prompts.jsonl`, `predictions.jsonl` and
/// `metadata.json`. In replay mode every prompt must already be cached;
/// otherwise nothing is judged and the missing query ids are reported.
pub fn cmd_run(cfg: &RunConfig, selections: Option<&Path>, backend: &dyn Backend) -> Result<String, CliError> {
    let inputs = load_inputs(cfg)?;
    let ontology = &inputs.corpus.ontology;
    let selections = match selections {
        Some(path) => load_selections(path, &inputs)?,
        None => select_all(cfg, &inputs)?,
    };
    let jobs = inputs
        .queries
        .iter()
        .zip(&selections)
        .map(|(q, s)| {
            let prompt = render_selection(q, s, &inputs.corpus, &cfg.template)
                .map_err(|e| runtime(format!("query {:?}: {e}", q.query_id)))?;
            Ok(Job {
                query_id: q.query_id.clone(),
                prompt,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let cache = match (&cfg.paths.cache, cfg.mode) {
        (Some(p), Mode::Live) => ReplayCache::open(p),
        (Some(p), Mode::Replay) => ReplayCache::open_read_only(p),
        (None, _) => {
            log::warn!("no paths.cache configured; responses will not be persisted");
            Ok(ReplayCache::in_memory())
        }
    }
    .map_err(invalid)?;
    if cfg.mode == Mode::Replay {
        let mut missing = Vec::new();
        for job in &jobs {
            if estimate_tokens(&job.prompt) > cfg.generation.max_input_tokens {
                continue;
            }
            if cache.get(&job.prompt, &cfg.generation).map_err(invalid)?.is_none() {
                missing.push(job.query_id.as_str());
            }
        }
        if !missing.is_empty() {
            return Err(runtime(format!(
                "replay cache has no response for {} of {} queries: {}",
                missing.len(),
                jobs.len(),
                missing.join(", ")
            )));
        }
    }

    let judge = Judge::new(backend, cache, cfg.generation.clone(), cfg.mode);
    let records = run_batch(&jobs, &judge, ontology, cfg.parallelism);
    let out = &cfg.paths.output;
    write_records(&out.join("selections.jsonl"), &selection_records(&selections, ontology))?;
    let prompts: Vec<PromptRecord> = records
        .iter()
        .map(|r| PromptRecord {
            query_id: r.query_id.clone(),
            prompt: r.prompt.clone(),
            response: r.response.clone(),
        })
        .collect();
    write_records(&out.join("prompts.jsonl"), &prompts)?;
    let predictions: Vec<PredictionRecord> = records
        .iter()
        .map(|r| PredictionRecord {
            query_id: r.query_id.clone(),
            relations: ontology.label_names(&r.prediction.relations),
            raw: r.response.clone().unwrap_or_default(),
            error: r.error.clone(),
        })
        .collect();
    write_records(&out.join("predictions.jsonl"), &predictions)?;
    write_metadata(cfg, "run")?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let cached = records.iter().filter(|r| r.cached).count();
    Ok(format!(
        "{}: {} queries ({cached} cached, {failed} failed) -> {}",
        cfg.strategy,
        records.len(),
        out.display()
    ))
}

fn check_coverage(pred: &Labelling, gold: &Labelling, what: &Path) -> Result<(), CliError> {
    let missing: Vec<&str> = gold.keys().filter(|q| !pred.contains_key(*q)).map(String::as_str).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{} lacks predictions for {} queries: {}",
            what.display(),
            missing.len(),
            missing.join(", ")
        )))
    }
}

/// Scores predictions and writes `report.json`, `per_relation.csv`,
/// `confusion_pairs.csv`, `recall_at_k.csv` (when scores are configured)
/// and `summary.txt`.
pub fn cmd_eval(cfg: &RunConfig, predictions: Option<&Path>, baseline: Option<&Path>) -> Result<EvalReport, CliError> {
    let p = &cfg.paths;
    let ontology = crate::corpus::load_ontology(cfg.require(&p.ontology, "ontology")?).map_err(corpus_err)?;
    let queries = load_queries(cfg.require(&p.queries, "queries")?, &ontology).map_err(corpus_err)?;
    let gold: Labelling = queries.iter().map(|q| (q.query_id.clone(), q.gold.clone())).collect();
    let default_pred = p.output.join("predictions.jsonl");
    let pred_path = predictions.unwrap_or(&default_pred);
    let pred = load_predictions(pred_path, &ontology)?;
    check_coverage(&pred, &gold, pred_path)?;
    let mut report = score(&gold, &pred, &ontology).map_err(invalid)?;

    if let Some(path) = &p.scores {
        let scores = load_scores(path, &ontology).map_err(invalid)?;
        report.recall_at_k = recall_curve(&gold, &scores).map_err(invalid)?;
    }
    if let Some(path) = baseline {
        let other = load_predictions(path, &ontology)?;
        check_coverage(&other, &gold, path)?;
        if let Some(q) = other.keys().find(|q| !gold.contains_key(*q)) {
            return Err(invalid(format!("{}: prediction for unknown query {q:?}", path.display())));
        }
        report.comparison = Some(mcnemar(&paired_records(&gold, &pred, &other)));
    }
    let pairs = confusion_pairs(&gold, &pred, &cfg.confusion_pairs, &ontology).map_err(invalid)?;

    let out = &p.output;
    write_file(
        &out.join("report.json"),
        &(serde_json::to_string_pretty(&report).map_err(runtime)? + "\n"),
    )?;
    write_file(&out.join("per_relation.csv"), &per_relation_csv(&report))?;
    write_file(&out.join("confusion_pairs.csv"), &confusion_csv(&pairs))?;
    if !report.recall_at_k.is_empty() {
        write_file(&out.join("recall_at_k.csv"), &recall_csv(&report.recall_at_k))?;
    }
    write_file(&out.join("summary.txt"), &summary_table(&report, &cfg.strategy.to_string()))?;
    write_metadata(cfg, "eval")?;
    Ok(report)
}
