//! Checks against the committed NYT-style fixture in `tests/fixtures/nyt`,
//! plus the small hand-computed metric and parser tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use hydre::baselines::{flatten, random_k_with, AblationVariant};
use hydre::cli::{cmd_eval, cmd_run, cmd_select, cmd_validate, load_inputs, select_all};
use hydre::config::{Overrides, RunConfig};
use hydre::corpus::{LabelSet, Relation, RelationId, RelationOntology};
use hydre::evaluation::{mcnemar_counts, recall_at_k, score, Labelling};
use hydre::judge::{FailOnDispatch, ReplayCache};
use hydre::pipeline::{render_selection, Strategy};
use hydre::prompting::{parse_response, render_prompt, ExemplarBlock, PromptTemplate};
use hydre::selection::{reduce_bag, reduced_sentences};
use hydre::synth::{generate, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::{ensure, gold_of, oracle_binomial_p, Check};

/// Strategies with canned responses in the committed replay cache.
pub const CACHED_STRATEGIES: [&str; 7] =
    ["hydre", "reduced_bag", "ablation:no_icl", "zero_shot", "topk_sim", "mmr", "random_k"];

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/nyt")
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// The fixture config with `strategy` and output redirected to `output`.
pub fn config(strategy: &str, output: &Path) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::load(&fixture_dir().join("run.toml")).map_err(err)?;
    cfg.apply(&Overrides {
        strategy: Some(strategy.parse().map_err(err)?),
        output: Some(output.to_owned()),
        ..Default::default()
    });
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

fn read_json(name: &str) -> Result<Value, String> {
    let path = fixture_dir().join(name);
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(err)
}

/// Rebuilds `cache.jsonl` from `responses.json`: every prompt the cached
/// strategies render is paired with its canned response.
pub fn regenerate_cache() -> Result<usize, String> {
    let responses = read_json("responses.json")?;
    let cache = ReplayCache::in_memory();
    let scratch = std::env::temp_dir();
    for strategy in CACHED_STRATEGIES {
        let cfg = config(strategy, &scratch)?;
        let inputs = load_inputs(&cfg).map_err(err)?;
        let selections = select_all(&cfg, &inputs).map_err(err)?;
        for (q, s) in inputs.queries.iter().zip(&selections) {
            let prompt = render_selection(q, s, &inputs.corpus, &cfg.template).map_err(err)?;
            let response = responses[strategy][&q.query_id]
                .as_str()
                .ok_or_else(|| format!("no canned response for {strategy} {}", q.query_id))?;
            cache.insert(&prompt, &cfg.generation, response).map_err(err)?;
        }
    }
    let mut text = String::new();
    for r in cache.records() {
        text.push_str(&serde_json::to_string(&r).map_err(err)?);
        text.push('\n');
    }
    fs::write(fixture_dir().join("cache.jsonl"), text).map_err(err)?;
    Ok(cache.len())
}

fn strategy_for_golden(name: &str) -> Result<&'static str, String> {
    Ok(match name {
        "hydre" => "hydre",
        "no_icl" => "ablation:no_icl",
        "reduced_bag" => "reduced_bag",
        other => return Err(format!("unknown golden prompt kind {other:?}")),
    })
}

/// Rendered prompts equal the hand-assembled golden files byte for byte.
pub fn check_golden_prompts() -> Check {
    let index = read_json("golden_prompts.json")?;
    let index = index.as_object().ok_or("golden index is not an object")?;
    ensure(index.len() == 3, || format!("expected 3 golden prompts, found {}", index.len()))?;
    let scratch = std::env::temp_dir();
    for (kind, entry) in index {
        let qid = entry["query_id"].as_str().ok_or("query_id")?;
        let file = entry["file"].as_str().ok_or("file")?;
        let expected = fs::read_to_string(fixture_dir().join(file)).map_err(err)?;
        let cfg = config(strategy_for_golden(kind)?, &scratch)?;
        let inputs = load_inputs(&cfg).map_err(err)?;
        let selections = select_all(&cfg, &inputs).map_err(err)?;
        let (q, s) = inputs
            .queries
            .iter()
            .zip(&selections)
            .find(|(q, _)| q.query_id == qid)
            .ok_or_else(|| format!("query {qid} not in fixture"))?;
        let got = render_selection(q, s, &inputs.corpus, &cfg.template).map_err(err)?;
        if got != expected {
            let at = got
                .bytes()
                .zip(expected.bytes())
                .position(|(a, b)| a != b)
                .unwrap_or(got.len().min(expected.len()));
            return Err(format!(
                "{kind} prompt for {qid} differs at byte {at}: got {:?}, want {:?}",
                &got[at.saturating_sub(20)..(at + 40).min(got.len())],
                &expected[at.saturating_sub(20)..(at + 40).min(expected.len())]
            ));
        }
    }
    Ok(())
}

/// `select` with the HYDRE strategy writes the selections computed by the
/// independent reference implementation.
pub fn check_golden_selections() -> Check {
    let expected = read_json("expected_hydre.json")?;
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = config("hydre", dir.path())?;
    let n = cmd_select(&cfg).map_err(err)?;
    ensure(n == 20, || format!("expected 20 selections, wrote {n}"))?;
    let text = fs::read_to_string(dir.path().join("selections.jsonl")).map_err(err)?;
    for line in text.lines() {
        let rec: Value = serde_json::from_str(line).map_err(err)?;
        let qid = rec["query_id"].as_str().ok_or("query_id")?;
        let want = &expected[qid];
        let cands: Vec<&str> = rec["candidates"]
            .as_array()
            .ok_or("candidates")?
            .iter()
            .filter_map(|c| c["relation"].as_str())
            .collect();
        let want_cands: Vec<&str> = want["candidates"]
            .as_array()
            .ok_or("expected candidates")?
            .iter()
            .filter_map(Value::as_str)
            .collect();
        ensure(cands == want_cands, || format!("{qid}: candidates {cands:?} vs {want_cands:?}"))?;
        let ex: Vec<[&str; 3]> = rec["exemplars"]
            .as_array()
            .ok_or("exemplars")?
            .iter()
            .map(|e| {
                [
                    e["candidate_relation"].as_str().unwrap_or(""),
                    e["source_bag_id"].as_str().unwrap_or(""),
                    e["sentence_id"].as_str().unwrap_or(""),
                ]
            })
            .collect();
        let want_ex: Vec<[&str; 3]> = want["exemplars"]
            .as_array()
            .ok_or("expected exemplars")?
            .iter()
            .map(|e| {
                [
                    e[0].as_str().unwrap_or(""),
                    e[1].as_str().unwrap_or(""),
                    e[2].as_str().unwrap_or(""),
                ]
            })
            .collect();
        ensure(ex == want_ex, || format!("{qid}: exemplars {ex:?} vs {want_ex:?}"))?;
    }
    Ok(())
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(err)? {
        let entry = entry.map_err(err)?;
        if entry.file_type().map_err(err)?.is_file() {
            out.insert(
                entry.file_name().to_string_lossy().into_owned(),
                fs::read(entry.path()).map_err(err)?,
            );
        }
    }
    Ok(out)
}

/// One validate, select, run, eval pass in `out` with a refusing backend.
/// Returns the number of dispatch attempts.
pub fn replay_pipeline(strategy: &str, out: &Path) -> Result<usize, String> {
    let cfg = config(strategy, out)?;
    cmd_validate(&cfg).map_err(err)?;
    cmd_select(&cfg).map_err(err)?;
    let backend = FailOnDispatch::default();
    cmd_run(&cfg, Some(&out.join("selections.jsonl")), &backend).map_err(err)?;
    cmd_eval(&cfg, None, None).map_err(err)?;
    Ok(backend.attempts())
}

/// Two full replay runs produce byte-identical outputs, nothing is
/// dispatched and every prediction came from the cache.
pub fn check_replay_determinism() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let attempts = replay_pipeline("hydre", dir.path())?;
    let first = snapshot(dir.path())?;
    let attempts2 = replay_pipeline("hydre", dir.path())?;
    let second = snapshot(dir.path())?;
    ensure(attempts + attempts2 == 0, || format!("{} dispatch attempts", attempts + attempts2))?;
    for name in ["predictions.jsonl", "report.json", "per_relation.csv", "summary.txt", "metadata.json"] {
        ensure(first.contains_key(name), || format!("{name} not written"))?;
    }
    ensure(first == second, || {
        let differing: Vec<_> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
        format!("outputs differ between runs: {differing:?}")
    })?;
    let preds = String::from_utf8_lossy(&first["predictions.jsonl"]).into_owned();
    ensure(preds.lines().count() == 20, || "expected 20 predictions".into())?;
    ensure(!preds.contains("\"error\""), || "a prediction carries an error".into())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))
}

fn nyt_ontology() -> Result<RelationOntology, String> {
    hydre::corpus::load_ontology(&fixture_dir().join("ontology.jsonl")).map_err(err)
}

/// (response, expected relation names) pairs over the fixture ontology.
pub const PARSER_CASES: &[(&str, &[&str])] = &[
    ("/business/company/founders", &["/business/company/founders"]),
    (
        "/business/company/founders\n/business/company/majorshareholders",
        &["/business/company/founders", "/business/company/majorshareholders"],
    ),
    ("NA", &[]),
    ("I am not sure which relation applies.", &[]),
    ("NA\n/people/person/religion", &["/people/person/religion"]),
    ("Output: /people/person/nationality", &["/people/person/nationality"]),
    (
        "- /people/person/place_lived\n- /people/person/place_of_birth",
        &["/people/person/place_lived", "/people/person/place_of_birth"],
    ),
    (
        "/people/person/nationality, /people/person/ethnicity",
        &["/people/person/nationality", "/people/person/ethnicity"],
    ),
    ("/business/location", &["/business/location"]),
    ("/location/location/contains", &["/location/location/contains"]),
    ("/people/person/nationality_of_record", &[]),
    ("", &[]),
    ("   \n\n", &[]),
    ("The answer is /location/country/capital.", &["/location/country/capital"]),
    (
        "/location/region/capital\n/location/country/capital",
        &["/location/region/capital", "/location/country/capital"],
    ),
    ("nationality", &[]),
    ("NA.", &[]),
    ("/people/person/children\n/people/person/children", &["/people/person/children"]),
    ("`/business/company/advisors`", &["/business/company/advisors"]),
    ("/business/person/company", &["/business/person/company"]),
    (
        "Relations:\n1. /time/event/locations\n2. /location/us_county/county_seat",
        &["/time/event/locations", "/location/us_county/county_seat"],
    ),
    ("/film/film/featured_film_locations", &["/film/film/featured_film_locations"]),
    ("NONE", &[]),
    (
        "/people/deceasedperson/place_of_death\r\n/people/deceasedperson/place_of_burial",
        &["/people/deceasedperson/place_of_death", "/people/deceasedperson/place_of_burial"],
    ),
    ("NA /location/administrative_division/country", &["/location/administrative_division/country"]),
    ("/people/ethnicity/geographic_distribution/", &[]),
];

pub fn check_parser_suite() -> Check {
    let ontology = nyt_ontology()?;
    ensure(PARSER_CASES.len() >= 20, || "fewer than 20 parser cases".into())?;
    for (raw, want) in PARSER_CASES {
        let want = ontology.resolve_labels(want)?;
        let got = parse_response(raw, &ontology).relations;
        ensure(got == want, || {
            format!(
                "{raw:?}: parsed {:?}, expected {:?}",
                ontology.label_names(&got),
                ontology.label_names(&want)
            )
        })?;
    }
    Ok(())
}

fn abc() -> RelationOntology {
    RelationOntology::new(
        ["A", "B", "C"]
            .iter()
            .map(|n| Relation {
                name: n.to_string(),
                definition: format!("relation {n}"),
            })
            .collect(),
    )
    .expect("distinct names")
}

fn labelling(rows: &[(&str, &[usize])]) -> Labelling {
    rows.iter()
        .map(|(q, rs)| (q.to_string(), rs.iter().map(|&r| RelationId(r)).collect::<LabelSet>()))
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

/// Five queries, hand-scored:
/// gold  q1 {A}  q2 {A,B}  q3 NA   q4 {C}    q5 {B}
/// pred  q1 {A}  q2 {A}    q3 {B}  q4 {A,C}  q5 {B}
/// 4 true positives of 6 predicted and 5 gold facts: P 2/3, R 4/5,
/// F1 8/11. Per relation F1: A 4/5, B 1/2, C 1, so macro 23/30.
pub fn check_metric_fixture() -> Check {
    let o = abc();
    let gold = labelling(&[("q1", &[0]), ("q2", &[0, 1]), ("q3", &[]), ("q4", &[2]), ("q5", &[1])]);
    let pred = labelling(&[("q1", &[0]), ("q2", &[0]), ("q3", &[1]), ("q4", &[0, 2]), ("q5", &[1])]);
    let r = score(&gold, &pred, &o).map_err(err)?;
    let got = [r.micro_precision, r.micro_recall, r.micro_f1, r.macro_f1];
    let want = [2.0 / 3.0, 4.0 / 5.0, 8.0 / 11.0, 23.0 / 30.0];
    ensure(got.iter().zip(&want).all(|(a, b)| close(*a, *b)), || {
        format!("metrics {got:?}, expected {want:?}")
    })?;
    let f1: Vec<f64> = r.per_relation.iter().map(|p| p.metrics.f1).collect();
    ensure(f1.len() == 3 && close(f1[0], 0.8) && close(f1[1], 0.5) && close(f1[2], 1.0), || {
        format!("per-relation F1 {f1:?}")
    })?;
    let perfect = score(&gold, &gold, &o).map_err(err)?;
    ensure(perfect.micro_f1 == 1.0 && perfect.macro_f1 == 1.0, || "pred = gold is not 1.0/1.0".into())?;
    ensure(perfect.summary_cell() == "100/100", || perfect.summary_cell())
}

/// Recall@k never decreases in k and reaches 1.0 at k = |R|.
pub fn check_recall_monotone(n: u64) -> Check {
    for seed in 0..n {
        let d = generate(&SynthSpec::default(), seed);
        let gold = gold_of(&d);
        let n_rel = d.corpus.ontology.len();
        let mut prev = 0.0;
        for k in 1..=n_rel {
            let r = recall_at_k(&gold, &d.scores, k).map_err(err)?;
            ensure(r >= prev, || format!("seed {seed}: recall@{k} = {r} < {prev}"))?;
            prev = r;
        }
        ensure(prev == 1.0, || format!("seed {seed}: recall@|R| = {prev}"))?;
    }
    Ok(())
}

/// b=15, c=5 gives the corrected statistic 81/20; every small table's exact
/// p-value matches the integer binomial oracle.
pub fn check_mcnemar() -> Check {
    let m = mcnemar_counts(15, 5);
    ensure(m.statistic == 4.05, || format!("statistic {}", m.statistic))?;
    for n in 1..25u64 {
        for b in 0..=n {
            let got = mcnemar_counts(b, n - b);
            let want = oracle_binomial_p(b, n - b);
            ensure(got.exact && close(got.p_value, want), || {
                format!("b={b} c={}: p {} vs oracle {want}", n - b, got.p_value)
            })?;
        }
    }
    let none = mcnemar_counts(0, 0);
    ensure(none.p_value == 1.0, || format!("b=c=0 gives p {}", none.p_value))
}

fn whitespace_tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Prompts with one reduced bag are never longer than prompts with the full
/// bag. Returns the mean token counts (reduced, full).
pub fn reduced_bag_economy(n_bags: usize) -> Result<(f64, f64), String> {
    let spec = SynthSpec {
        n_bags,
        max_sentences_per_bag: 8,
        max_labels_per_bag: 3,
        n_queries: 1,
        na_prob: 0.0,
        ..Default::default()
    };
    let d = generate(&spec, 7);
    let template = PromptTemplate::default();
    let query = d.queries[0].as_sentence();
    let (mut reduced_total, mut full_total) = (0usize, 0usize);
    for bag in &d.corpus.bags {
        let keep = reduced_sentences(&reduce_bag(bag, &d.scores).map_err(err)?);
        let prompt = |sentences: Vec<_>| {
            render_prompt(
                &query,
                &[ExemplarBlock {
                    sentences,
                    labels: bag.labels.clone(),
                }],
                &[],
                &d.corpus.ontology,
                &template,
            )
            .map_err(err)
        };
        let reduced = whitespace_tokens(&prompt(keep.iter().map(|&i| &bag.sentences[i]).collect())?);
        let full = whitespace_tokens(&prompt(bag.sentences.iter().collect())?);
        ensure(reduced <= full, || format!("bag {}: reduced {reduced} > full {full}", bag.bag_id))?;
        reduced_total += reduced;
        full_total += full;
    }
    let n = d.corpus.bags.len() as f64;
    Ok((reduced_total as f64 / n, full_total as f64 / n))
}

pub fn check_reduced_economy() -> Check {
    let (reduced, full) = reduced_bag_economy(100)?;
    ensure(reduced < full, || format!("mean reduced {reduced} not below full {full}"))
}

pub fn check_defaults() -> Check {
    let c = RunConfig::default();
    let got = (
        c.scoring.k,
        c.scoring.threshold,
        c.generation.temperature,
        c.generation.max_input_tokens,
        c.generation.max_output_tokens,
        c.baseline.mmr_alpha,
    );
    ensure(got == (5, 0.5, 0.0, 2048, 256, 0.3), || format!("defaults {got:?}"))
}

/// Pick frequencies of random-k stay within 3 sigma of uniform.
pub fn check_random_k_uniform() -> Check {
    let d = generate(&SynthSpec::default(), 11);
    let flat = flatten(&d.corpus);
    let (n, k, trials) = (flat.len(), 5usize, 4000u64);
    let mut counts = vec![0usize; n];
    let index: BTreeMap<&str, usize> =
        flat.iter().enumerate().map(|(i, e)| (e.sentence.sentence_id.as_str(), i)).collect();
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(t);
        for e in random_k_with(&flat, k, &mut rng).map_err(err)? {
            counts[index[e.sentence.sentence_id.as_str()]] += 1;
        }
    }
    let p = k as f64 / n as f64;
    let mean = trials as f64 * p;
    let sd = (trials as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        ensure((c as f64 - mean).abs() <= 3.0 * sd, || {
            format!("item {i} picked {c} times, expected {mean:.1} +- {:.1}", 3.0 * sd)
        })?;
    }
    Ok(())
}

/// The no-exemplar ablation keeps candidate metadata but selects nothing.
pub fn check_no_icl_selection() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = config(&Strategy::Ablation(AblationVariant::NoIcl).to_string(), dir.path())?;
    cmd_select(&cfg).map_err(err)?;
    let text = fs::read_to_string(dir.path().join("selections.jsonl")).map_err(err)?;
    for line in text.lines() {
        let rec: Value = serde_json::from_str(line).map_err(err)?;
        ensure(rec["exemplars"].as_array().is_some_and(Vec::is_empty), || format!("exemplars in {line}"))?;
        ensure(rec["candidates"].as_array().is_some_and(|c| c.len() == 5), || format!("candidates in {line}"))?;
    }
    Ok(())
}
