//! Multi-label scoring over (query, relation) facts, Recall@k of the
//! candidate stage, McNemar's paired test and relation-pair confusion counts.
//!
//! NA never appears as a fact: an NA query has no gold facts, and a correct
//! NA prediction contributes nothing to TP/FP/FN.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};
use thiserror::Error;

use crate::corpus::{LabelSet, RelationId, RelationOntology};
use crate::providers::{ProviderError, ScoreMatrix};
use crate::selection::rank_relations;

/// Per-query relation sets keyed by query id. An empty set is NA.
pub type Labelling = BTreeMap<String, LabelSet>;

/// Below this many discordant pairs the exact binomial test is used.
pub const EXACT_MCNEMAR_BELOW: u64 = 25;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction for unknown query {0:?}")]
    UnknownQuery(String),
    #[error("unknown relation {0:?}")]
    UnknownRelation(String),
    #[error("query {0:?} has no confidence scores")]
    Unscored(String),
}

impl From<ProviderError> for EvalError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::MissingScores(id) => EvalError::Unscored(id),
            other => EvalError::Unscored(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct FactSet {
    pub facts: BTreeSet<(String, RelationId)>,
}

impl FactSet {
    pub fn from_labelling(labels: &Labelling) -> Self {
        let facts = labels
            .iter()
            .flat_map(|(q, rels)| rels.iter().map(move |&r| (q.clone(), r)))
            .collect();
        Self { facts }
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RelationMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl RelationMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        Self {
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            support: tp + fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerRelation {
    pub relation: String,
    #[serde(flatten)]
    pub metrics: RelationMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub n_queries: usize,
    pub n_gold_facts: usize,
    pub n_pred_facts: usize,
    pub per_relation: Vec<PerRelation>,
    /// `(k, Recall@k)` for k = 1..=|R|, when scores were supplied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recall_at_k: Vec<(usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<McNemar>,
}

impl EvalReport {
    /// `micro/macro` as rounded percentages, e.g. `63/60`.
    pub fn summary_cell(&self) -> String {
        format!(
            "{}/{}",
            (self.micro_f1 * 100.0).round() as i64,
            (self.macro_f1 * 100.0).round() as i64
        )
    }
}

/// Micro and macro F1 over facts. Queries absent from `pred` count as NA
/// predictions. Macro-F1 averages relations with gold support; with no gold
/// facts at all, both scores are 1.0 when nothing was predicted and 0.0
/// otherwise.
pub fn score(gold: &Labelling, pred: &Labelling, ontology: &RelationOntology) -> Result<EvalReport, EvalError> {
    if let Some(q) = pred.keys().find(|q| !gold.contains_key(*q)) {
        return Err(EvalError::UnknownQuery(q.clone()));
    }
    let n = ontology.len();
    let (mut tp, mut fp, mut fn_) = (vec![0usize; n], vec![0usize; n], vec![0usize; n]);
    let empty = LabelSet::new();
    for (q, g) in gold {
        let p = pred.get(q).unwrap_or(&empty);
        for r in g.union(p) {
            if r.0 >= n {
                return Err(EvalError::UnknownRelation(r.to_string()));
            }
            match (g.contains(r), p.contains(r)) {
                (true, true) => tp[r.0] += 1,
                (false, true) => fp[r.0] += 1,
                (true, false) => fn_[r.0] += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    let per_relation: Vec<PerRelation> = ontology
        .ids()
        .map(|r| PerRelation {
            relation: ontology.name(r).to_owned(),
            metrics: RelationMetrics::from_counts(tp[r.0], fp[r.0], fn_[r.0]),
        })
        .collect();
    let (stp, sfp, sfn): (usize, usize, usize) = (tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    let (micro_f1, macro_f1) = if stp + sfn == 0 {
        let v = if sfp == 0 { 1.0 } else { 0.0 };
        (v, v)
    } else {
        let supported: Vec<f64> = per_relation
            .iter()
            .filter(|p| p.metrics.support > 0)
            .map(|p| p.metrics.f1)
            .collect();
        (
            ratio(2 * stp, 2 * stp + sfp + sfn),
            supported.iter().sum::<f64>() / supported.len() as f64,
        )
    };
    Ok(EvalReport {
        micro_precision: ratio(stp, stp + sfp),
        micro_recall: ratio(stp, stp + sfn),
        micro_f1,
        macro_f1,
        n_queries: gold.len(),
        n_gold_facts: stp + sfn,
        n_pred_facts: stp + sfp,
        per_relation,
        recall_at_k: Vec::new(),
        comparison: None,
    })
}

/// Fraction of gold facts whose relation is among the query's top-k by
/// confidence (same tie rule as candidate selection). NA queries carry no
/// facts; with no facts at all the recall is 1.0.
pub fn recall_at_k(gold: &Labelling, scores: &ScoreMatrix, k: usize) -> Result<f64, EvalError> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for (q, g) in gold {
        if g.is_empty() {
            continue;
        }
        let row = scores.row(q).map_err(|_| EvalError::Unscored(q.clone()))?;
        let top: LabelSet = rank_relations(row).into_iter().take(k).collect();
        total += g.len();
        hit += g.intersection(&top).count();
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}

/// Recall@k for every k in 1..=|R|.
pub fn recall_curve(gold: &Labelling, scores: &ScoreMatrix) -> Result<Vec<(usize, f64)>, EvalError> {
    (1..=scores.relation_order().len())
        .map(|k| Ok((k, recall_at_k(gold, scores, k)?)))
        .collect()
}

/// Correctness of two systems on one gold fact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedRecord {
    pub query_id: String,
    pub relation: RelationId,
    pub a_correct: bool,
    pub b_correct: bool,
}

/// One record per gold fact: is the fact present in each system's output?
pub fn paired_records(gold: &Labelling, a: &Labelling, b: &Labelling) -> Vec<PairedRecord> {
    let empty = LabelSet::new();
    FactSet::from_labelling(gold)
        .facts
        .into_iter()
        .map(|(q, r)| PairedRecord {
            a_correct: a.get(&q).unwrap_or(&empty).contains(&r),
            b_correct: b.get(&q).unwrap_or(&empty).contains(&r),
            query_id: q,
            relation: r,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A correct, B wrong.
    pub b: u64,
    /// A wrong, B correct.
    pub c: u64,
    /// Continuity-corrected chi-square statistic.
    pub statistic: f64,
    pub p_value: f64,
    /// Whether `p_value` comes from the exact binomial test.
    pub exact: bool,
}

pub fn mcnemar_counts(b: u64, c: u64) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar {
            b,
            c,
            statistic: 0.0,
            p_value: 1.0,
            exact: false,
        };
    }
    let diff = b.abs_diff(c) as f64 - 1.0;
    let statistic = diff * diff / n as f64;
    let exact = n < EXACT_MCNEMAR_BELOW;
    let p_value = if exact {
        let binom = Binomial::new(0.5, n).expect("valid binomial");
        2.0 * binom.cdf(b.min(c)).min(0.5)
    } else {
        ChiSquared::new(1.0).expect("valid chi-square").sf(statistic)
    };
    McNemar {
        b,
        c,
        statistic,
        p_value,
        exact,
    }
}

pub fn mcnemar(records: &[PairedRecord]) -> McNemar {
    let b = records.iter().filter(|r| r.a_correct && !r.b_correct).count() as u64;
    let c = records.iter().filter(|r| !r.a_correct && r.b_correct).count() as u64;
    mcnemar_counts(b, c)
}

/// 2x2 counts for a pair of easily confused relations. `ab` counts queries
/// with gold `a` whose prediction includes `b`, and so on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub relation_a: String,
    pub relation_b: String,
    pub aa: usize,
    pub ab: usize,
    pub ba: usize,
    pub bb: usize,
}

pub fn confusion_pairs(
    gold: &Labelling,
    pred: &Labelling,
    pairs: &[(String, String)],
    ontology: &RelationOntology,
) -> Result<Vec<ConfusionRow>, EvalError> {
    let id = |name: &str| ontology.id(name).ok_or_else(|| EvalError::UnknownRelation(name.to_owned()));
    let empty = LabelSet::new();
    pairs
        .iter()
        .map(|(a, b)| {
            let (ra, rb) = (id(a)?, id(b)?);
            let mut row = ConfusionRow {
                relation_a: a.clone(),
                relation_b: b.clone(),
                aa: 0,
                ab: 0,
                ba: 0,
                bb: 0,
            };
            for (q, g) in gold {
                let p = pred.get(q).unwrap_or(&empty);
                if g.contains(&ra) {
                    row.aa += p.contains(&ra) as usize;
                    row.ab += p.contains(&rb) as usize;
                }
                if g.contains(&rb) {
                    row.ba += p.contains(&ra) as usize;
                    row.bb += p.contains(&rb) as usize;
                }
            }
            Ok(row)
        })
        .collect()
}

pub fn per_relation_csv(report: &EvalReport) -> String {
    let mut out = String::from("relation,precision,recall,f1,support,tp,fp,fn\n");
    for p in &report.per_relation {
        let m = &p.metrics;
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{},{},{},{}\n",
            p.relation, m.precision, m.recall, m.f1, m.support, m.tp, m.fp, m.fn_
        ));
    }
    out
}

pub fn confusion_csv(rows: &[ConfusionRow]) -> String {
    let mut out = String::from("relation_a,relation_b,gold_a_pred_a,gold_a_pred_b,gold_b_pred_a,gold_b_pred_b\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.relation_a, r.relation_b, r.aa, r.ab, r.ba, r.bb
        ));
    }
    out
}

pub fn recall_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("k,recall\n");
    for (k, r) in curve {
        out.push_str(&format!("{k},{r:.6}\n"));
    }
    out
}

/// Plain-text table: overall cell, then one line per relation with support.
pub fn summary_table(report: &EvalReport, label: &str) -> String {
    let mut out = format!(
        "{label}: micro/macro F1 = {}  (P={:.4} R={:.4} micro={:.4} macro={:.4}; {} queries, {} gold facts)\n",
        report.summary_cell(),
        report.micro_precision,
        report.micro_recall,
        report.micro_f1,
        report.macro_f1,
        report.n_queries,
        report.n_gold_facts
    );
    for p in report.per_relation.iter().filter(|p| p.metrics.support > 0) {
        out.push_str(&format!(
            "  {:<48} P={:.3} R={:.3} F1={:.3} n={}\n",
            p.relation, p.metrics.precision, p.metrics.recall, p.metrics.f1, p.metrics.support
        ));
    }
    if let Some(m) = &report.comparison {
        out.push_str(&format!(
            "McNemar: b={} c={} statistic={:.4} p={:.6}{}\n",
            m.b,
            m.c,
            m.statistic,
            m.p_value,
            if m.exact { " (exact binomial)" } else { "" }
        ));
    }
    out
}
