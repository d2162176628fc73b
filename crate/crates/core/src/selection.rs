//! Three-stage exemplar selection.
//!
//! 1. Candidate relations: the top-k relations by query confidence.
//! 2. Bag selection: for each candidate, the bag labelled with it that
//!    maximizes `w_sim * sim(q, bag) + w_conf * max_s f(s, r)`.
//! 3. Sentence selection: within that bag, the sentence covering the most
//!    bag labels above the threshold, then with the highest summed
//!    confidence over the bag labels.
//!
//! Exemplars are returned least relevant first, so the strongest candidate
//! sits right before the query in the prompt. Every tie is broken by
//! position: ontology index, then corpus order, then in-bag order.

use rand::Rng;
use thiserror::Error;

use crate::corpus::{Bag, Corpus, LabelSet, RelationId, SentenceInstance};
use crate::providers::{
    bag_similarity, combined_bag_score, EmbeddingIndex, ProviderError, ScoreMatrix, ScoringConfig,
};
use crate::rng::query_rng;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no training bag is labelled with relation {0}")]
    NoBagForRelation(RelationId),
    #[error("candidate count k must be at least 1")]
    EmptyCandidates,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Precomputed artifacts the selection stages read from.
#[derive(Debug, Clone, Copy, Default)]
pub struct Providers<'a> {
    pub scores: Option<&'a ScoreMatrix>,
    pub embeddings: Option<&'a EmbeddingIndex>,
}

impl<'a> Providers<'a> {
    pub fn new(scores: Option<&'a ScoreMatrix>, embeddings: Option<&'a EmbeddingIndex>) -> Self {
        Self { scores, embeddings }
    }

    pub fn scores(&self) -> Result<&'a ScoreMatrix, ProviderError> {
        self.scores
            .ok_or_else(|| ProviderError::Invalid("confidence scores required".into()))
    }

    pub fn embeddings(&self) -> Result<&'a EmbeddingIndex, ProviderError> {
        self.embeddings
            .ok_or_else(|| ProviderError::Invalid("embeddings required".into()))
    }
}

/// All relations ordered by descending score, ties by ontology index.
pub fn rank_relations(row: &[f64]) -> Vec<RelationId> {
    let mut ids: Vec<usize> = (0..row.len()).collect();
    ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    ids.into_iter().map(RelationId).collect()
}

/// Stage 1: the `min(k, |R|)` highest-scoring relations for the query.
pub fn select_candidates(
    query_id: &str,
    scores: &ScoreMatrix,
    k: usize,
) -> Result<Vec<(RelationId, f64)>, SelectionError> {
    if k == 0 {
        return Err(SelectionError::EmptyCandidates);
    }
    let row = scores.row(query_id)?;
    Ok(rank_relations(row)
        .into_iter()
        .take(k)
        .map(|r| (r, row[r.0]))
        .collect())
}

/// Candidate relations without a confidence model: walk bags from most to
/// least similar and collect unseen labels until `k` are found. The score
/// attached to each relation is the similarity of the bag that introduced it.
pub fn similarity_candidates(
    query_id: &str,
    corpus: &Corpus,
    embeddings: &EmbeddingIndex,
    config: &ScoringConfig,
) -> Result<Vec<(RelationId, f64)>, SelectionError> {
    if config.k == 0 {
        return Err(SelectionError::EmptyCandidates);
    }
    let mut sims = Vec::new();
    for (i, bag) in corpus.bags.iter().enumerate() {
        if !bag.is_na() {
            sims.push((i, bag_similarity(query_id, bag, embeddings, config.bag_sim_pooling)?));
        }
    }
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut seen = LabelSet::new();
    let mut out = Vec::new();
    'bags: for (i, sim) in sims {
        for &r in &corpus.bags[i].labels {
            if seen.insert(r) {
                out.push((r, sim));
                if out.len() == config.k {
                    break 'bags;
                }
            }
        }
    }
    Ok(out)
}

/// Stage 2: position of the best bag labelled `r`, earliest on ties.
pub fn select_bag(
    query_id: &str,
    r: RelationId,
    corpus: &Corpus,
    providers: Providers<'_>,
    config: &ScoringConfig,
) -> Result<usize, SelectionError> {
    let mut best: Option<(usize, f64)> = None;
    for &i in corpus.index.get(r) {
        let score = combined_bag_score(
            query_id,
            &corpus.bags[i],
            r,
            providers.scores,
            providers.embeddings,
            config,
        )?;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    best.map(|(i, _)| i).ok_or(SelectionError::NoBagForRelation(r))
}

/// Number of bag labels on which `s` scores strictly above `threshold`, and
/// the summed score over those labels.
fn coverage(
    sentence_id: &str,
    labels: &LabelSet,
    scores: &ScoreMatrix,
    threshold: f64,
) -> Result<(usize, f64), ProviderError> {
    let row = scores.row(sentence_id)?;
    let covered = labels.iter().filter(|r| row[r.0] > threshold).count();
    let total = labels.iter().map(|r| row[r.0]).sum();
    Ok((covered, total))
}

/// Stage 3: in-bag index of the representative sentence.
pub fn select_sentence(
    bag: &Bag,
    scores: &ScoreMatrix,
    threshold: f64,
) -> Result<usize, SelectionError> {
    let mut best: Option<(usize, usize, f64)> = None;
    for (i, s) in bag.sentences.iter().enumerate() {
        let (cov, total) = coverage(&s.sentence_id, &bag.labels, scores, threshold)?;
        let better = match best {
            None => true,
            Some((_, bc, bt)) => cov > bc || (cov == bc && total > bt),
        };
        if better {
            best = Some((i, cov, total));
        }
    }
    Ok(best.expect("bags are nonempty").0)
}

/// One selected bag per candidate relation (stages 1 and 2).
#[derive(Debug, Clone, PartialEq)]
pub struct BagPick {
    pub relation: RelationId,
    pub candidate_score: f64,
    /// Position in `corpus.bags`.
    pub bag: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagSelection {
    pub query_id: String,
    /// Candidates, most relevant first.
    pub candidates: Vec<(RelationId, f64)>,
    /// Picks in candidate order; skipped candidates are absent.
    pub picks: Vec<BagPick>,
    pub skipped: Vec<RelationId>,
}

/// Stage 1 for the configured mode.
pub fn candidate_relations(
    query_id: &str,
    corpus: &Corpus,
    providers: Providers<'_>,
    config: &ScoringConfig,
) -> Result<Vec<(RelationId, f64)>, SelectionError> {
    if config.similarity_only() {
        similarity_candidates(query_id, corpus, providers.embeddings()?, config)
    } else {
        select_candidates(query_id, providers.scores()?, config.k)
    }
}

/// Stage 2 over an explicit candidate list.
pub fn select_bags_for(
    query_id: &str,
    candidates: Vec<(RelationId, f64)>,
    corpus: &Corpus,
    providers: Providers<'_>,
    config: &ScoringConfig,
) -> Result<BagSelection, SelectionError> {
    let mut picks = Vec::with_capacity(candidates.len());
    let mut skipped = Vec::new();
    for &(r, score) in &candidates {
        match select_bag(query_id, r, corpus, providers, config) {
            Ok(bag) => picks.push(BagPick {
                relation: r,
                candidate_score: score,
                bag,
            }),
            Err(SelectionError::NoBagForRelation(r)) => {
                log::info!("query {query_id}: no training bag for {}", corpus.ontology.name(r));
                skipped.push(r);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BagSelection {
        query_id: query_id.to_owned(),
        candidates,
        picks,
        skipped,
    })
}

/// Stages 1 and 2.
pub fn select_bags(
    query_id: &str,
    corpus: &Corpus,
    providers: Providers<'_>,
    config: &ScoringConfig,
) -> Result<BagSelection, SelectionError> {
    let candidates = candidate_relations(query_id, corpus, providers, config)?;
    select_bags_for(query_id, candidates, corpus, providers, config)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub sentence: SentenceInstance,
    /// The source bag's full labelset.
    pub labels: LabelSet,
    pub source_bag_id: String,
    pub candidate_relation: RelationId,
    pub candidate_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    pub query_id: String,
    /// Least relevant first.
    pub exemplars: Vec<Exemplar>,
    pub candidates: Vec<(RelationId, f64)>,
    pub skipped: Vec<RelationId>,
}

/// Stage 3 over a bag selection. With a confidence model the representative
/// sentence is chosen by coverage; in similarity-only mode it is drawn
/// uniformly with the query-scoped generator.
pub fn exemplars_from_bags(
    selection: BagSelection,
    corpus: &Corpus,
    providers: Providers<'_>,
    config: &ScoringConfig,
) -> Result<ExemplarSet, SelectionError> {
    let mut rng = query_rng(config.seed, &selection.query_id, "sentence");
    let mut exemplars = Vec::with_capacity(selection.picks.len());
    for pick in &selection.picks {
        let bag = &corpus.bags[pick.bag];
        let s = if config.similarity_only() {
            rng.gen_range(0..bag.sentences.len())
        } else {
            select_sentence(bag, providers.scores()?, config.threshold)?
        };
        exemplars.push(Exemplar {
            sentence: bag.sentences[s].clone(),
            labels: bag.labels.clone(),
            source_bag_id: bag.bag_id.clone(),
            candidate_relation: pick.relation,
            candidate_score: pick.candidate_score,
        });
    }
    exemplars.reverse();
    Ok(ExemplarSet {
        query_id: selection.query_id,
        exemplars,
        candidates: selection.candidates,
        skipped: selection.skipped,
    })
}

/// The full three-stage selection for one query.
pub fn build_exemplar_set(
    query_id: &str,
    corpus: &Corpus,
    providers: Providers<'_>,
    config: &ScoringConfig,
) -> Result<ExemplarSet, SelectionError> {
    let bags = select_bags(query_id, corpus, providers, config)?;
    exemplars_from_bags(bags, corpus, providers, config)
}

/// For each label of the bag (ontology order), the in-bag index of the
/// sentence scoring highest on it.
pub fn reduce_bag(bag: &Bag, scores: &ScoreMatrix) -> Result<Vec<(RelationId, usize)>, SelectionError> {
    let rows = bag
        .sentences
        .iter()
        .map(|s| scores.row(&s.sentence_id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(bag
        .labels
        .iter()
        .map(|&r| {
            let mut best = 0;
            for (i, row) in rows.iter().enumerate() {
                if row[r.0] > rows[best][r.0] {
                    best = i;
                }
            }
            (r, best)
        })
        .collect())
}

/// Distinct sentence indices kept by [`reduce_bag`], in bag order.
pub fn reduced_sentences(reduced: &[(RelationId, usize)]) -> Vec<usize> {
    let mut idx: Vec<usize> = reduced.iter().map(|&(_, s)| s).collect();
    idx.sort_unstable();
    idx.dedup();
    idx
}
