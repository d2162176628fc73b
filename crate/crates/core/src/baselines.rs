//! Few-shot baselines over the flattened corpus (Random-K, TopK-sim, MMR)
//! and the ablations of the three-stage selector.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, LabelSet, RelationId, SentenceInstance};
use crate::pipeline::{PromptExemplar, Selection};
use crate::prompting::RelationScope;
use crate::providers::{EmbeddingIndex, ProviderError, ScoringConfig};
use crate::rng::query_rng;
use crate::selection::{
    build_exemplar_set, candidate_relations, select_bags, select_bags_for, select_candidates,
    Providers, SelectionError,
};

pub const DEFAULT_MMR_ALPHA: f64 = 0.3;
pub const DEFAULT_MMR_POOL: usize = 100;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("asked for {k} exemplars from {available}")]
    NotEnough { k: usize, available: usize },
    #[error("alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("unknown ablation variant {0:?}")]
    UnknownVariant(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

/// A training sentence carrying its bag's labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatExample<'a> {
    pub sentence: &'a SentenceInstance,
    pub labels: &'a LabelSet,
    pub source_bag_id: &'a str,
}

impl FlatExample<'_> {
    fn to_prompt_exemplar(self) -> PromptExemplar {
        PromptExemplar::sentence(self.sentence, self.source_bag_id, self.labels.clone())
    }
}

pub fn flatten(corpus: &Corpus) -> Vec<FlatExample<'_>> {
    corpus
        .bags
        .iter()
        .flat_map(|bag| {
            bag.sentences.iter().map(move |s| FlatExample {
                sentence: s,
                labels: &bag.labels,
                source_bag_id: &bag.bag_id,
            })
        })
        .collect()
}

/// Uniform sample of `k` items without replacement, in draw order.
pub fn random_k_with<'a, R: Rng + ?Sized>(
    flat: &[FlatExample<'a>],
    k: usize,
    rng: &mut R,
) -> Result<Vec<FlatExample<'a>>, BaselineError> {
    if k > flat.len() {
        return Err(BaselineError::NotEnough {
            k,
            available: flat.len(),
        });
    }
    Ok(index::sample(rng, flat.len(), k)
        .into_iter()
        .map(|i| flat[i])
        .collect())
}

pub fn random_k<'a>(
    flat: &[FlatExample<'a>],
    k: usize,
    seed: u64,
) -> Result<Vec<FlatExample<'a>>, BaselineError> {
    random_k_with(flat, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Flat positions ordered by descending similarity to the query, ties by
/// corpus order.
fn ranked_by_similarity(
    query_id: &str,
    flat: &[FlatExample<'_>],
    embeddings: &EmbeddingIndex,
) -> Result<Vec<(usize, f64)>, ProviderError> {
    let q = embeddings.vector(query_id)?;
    let mut sims = flat
        .iter()
        .enumerate()
        .map(|(i, ex)| Ok((i, embeddings.similarity_to(q, &ex.sentence.sentence_id)?)))
        .collect::<Result<Vec<_>, ProviderError>>()?;
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(sims)
}

/// The `k` most query-similar sentences, most similar first.
pub fn topk_sim<'a>(
    query_id: &str,
    flat: &[FlatExample<'a>],
    embeddings: &EmbeddingIndex,
    k: usize,
) -> Result<Vec<FlatExample<'a>>, BaselineError> {
    Ok(ranked_by_similarity(query_id, flat, embeddings)?
        .into_iter()
        .take(k)
        .map(|(i, _)| flat[i])
        .collect())
}

/// Greedy maximal marginal relevance over the `pool_size` most similar
/// sentences (`None` for the whole corpus). Each step takes the pool item
/// maximizing `alpha * sim(q, s) - (1 - alpha) * max_{s' chosen} sim(s, s')`;
/// ties go to the item ranked higher by query similarity.
pub fn mmr_select<'a>(
    query_id: &str,
    flat: &[FlatExample<'a>],
    embeddings: &EmbeddingIndex,
    k: usize,
    alpha: f64,
    pool_size: Option<usize>,
) -> Result<Vec<FlatExample<'a>>, BaselineError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(BaselineError::BadAlpha(alpha));
    }
    let mut pool = ranked_by_similarity(query_id, flat, embeddings)?;
    if let Some(n) = pool_size {
        pool.truncate(n);
    }
    if k > pool.len() {
        return Err(BaselineError::NotEnough {
            k,
            available: pool.len(),
        });
    }
    let vectors = pool
        .iter()
        .map(|&(i, _)| embeddings.vector(&flat[i].sentence.sentence_id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut redundancy = vec![f64::NEG_INFINITY; pool.len()];
    let mut taken = vec![false; pool.len()];
    let mut out = Vec::with_capacity(k);
    for step in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (p, &(_, sim_q)) in pool.iter().enumerate() {
            if taken[p] {
                continue;
            }
            let objective = if step == 0 {
                sim_q
            } else {
                alpha * sim_q - (1.0 - alpha) * redundancy[p]
            };
            if best.is_none_or(|(_, b)| objective > b) {
                best = Some((p, objective));
            }
        }
        let (chosen, _) = best.expect("pool has k items");
        taken[chosen] = true;
        out.push(flat[pool[chosen].0]);
        for p in 0..pool.len() {
            if !taken[p] {
                let s = crate::providers::cosine_sim(vectors[p], vectors[chosen])?;
                redundancy[p] = redundancy[p].max(s);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    /// Stage 1 removed: every ontology relation is a candidate.
    AllRelations,
    /// Stages 2-3 replaced by retrieval over flattened sentences.
    FlatRetrieval,
    /// Stage 3 removed: whole bags as exemplars.
    FullBag,
    /// Bag selection by confidence only.
    NoSim,
    /// Bag selection by similarity only, random in-bag sentence.
    NoConf,
    /// Random bag with the candidate label, then a random sentence.
    RandomBagSentence,
    /// No exemplars; the relation list is restricted to the candidates.
    NoIcl,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 7] = [
        Self::AllRelations,
        Self::FlatRetrieval,
        Self::FullBag,
        Self::NoSim,
        Self::NoConf,
        Self::RandomBagSentence,
        Self::NoIcl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::AllRelations => "all_relations",
            Self::FlatRetrieval => "flat_retrieval",
            Self::FullBag => "full_bag",
            Self::NoSim => "no_sim",
            Self::NoConf => "no_conf",
            Self::RandomBagSentence => "random_bag_sentence",
            Self::NoIcl => "no_icl",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| BaselineError::UnknownVariant(s.to_owned()))
    }
}

/// Runs one ablated pipeline for a query.
pub fn ablation_variant(
    variant: AblationVariant,
    query_id: &str,
    corpus: &Corpus,
    providers: Providers<'_>,
    config: &ScoringConfig,
) -> Result<Selection, BaselineError> {
    let strategy = format!("ablation:{variant}");
    let sel = match variant {
        AblationVariant::AllRelations => {
            let candidates = select_candidates(query_id, providers.scores()?, corpus.ontology.len())?;
            let bags = select_bags_for(query_id, candidates, corpus, providers, config)?;
            let set = crate::selection::exemplars_from_bags(bags, corpus, providers, config)?;
            Selection::from_exemplar_set(&set, strategy)
        }
        AblationVariant::NoSim => {
            let cfg = ScoringConfig {
                w_sim: 0.0,
                ..config.clone()
            };
            Selection::from_exemplar_set(&build_exemplar_set(query_id, corpus, providers, &cfg)?, strategy)
        }
        AblationVariant::NoConf => {
            let cfg = ScoringConfig {
                w_conf: 0.0,
                w_sim: if config.w_sim > 0.0 { config.w_sim } else { 1.0 },
                ..config.clone()
            };
            let providers = Providers::new(None, providers.embeddings);
            Selection::from_exemplar_set(&build_exemplar_set(query_id, corpus, providers, &cfg)?, strategy)
        }
        AblationVariant::FullBag => {
            let bags = select_bags(query_id, corpus, providers, config)?;
            let mut exemplars: Vec<_> = bags
                .picks
                .iter()
                .map(|p| {
                    let bag = &corpus.bags[p.bag];
                    PromptExemplar {
                        sentence_ids: bag.sentences.iter().map(|s| s.sentence_id.clone()).collect(),
                        source_bag_id: bag.bag_id.clone(),
                        labels: bag.labels.clone(),
                        candidate_relation: Some(p.relation),
                        candidate_score: Some(p.candidate_score),
                    }
                })
                .collect();
            exemplars.reverse();
            Selection {
                query_id: query_id.to_owned(),
                strategy,
                candidates: bags.candidates,
                skipped: bags.skipped,
                relation_scope: RelationScope::FullOntology,
                exemplars,
            }
        }
        AblationVariant::FlatRetrieval => {
            let candidates = candidate_relations(query_id, corpus, providers, config)?;
            let flat = flatten(corpus);
            let mut exemplars = Vec::new();
            let mut skipped = Vec::new();
            for &(r, score) in &candidates {
                match best_flat_for_relation(query_id, r, &flat, providers, config)? {
                    Some(ex) => {
                        let mut pe = ex.to_prompt_exemplar();
                        pe.candidate_relation = Some(r);
                        pe.candidate_score = Some(score);
                        exemplars.push(pe);
                    }
                    None => skipped.push(r),
                }
            }
            exemplars.reverse();
            Selection {
                query_id: query_id.to_owned(),
                strategy,
                candidates,
                skipped,
                relation_scope: RelationScope::FullOntology,
                exemplars,
            }
        }
        AblationVariant::RandomBagSentence => {
            let candidates = candidate_relations(query_id, corpus, providers, config)?;
            let mut rng = query_rng(config.seed, query_id, "random_bag_sentence");
            let mut exemplars = Vec::new();
            let mut skipped = Vec::new();
            for &(r, score) in &candidates {
                let bags = corpus.index.get(r);
                if bags.is_empty() {
                    skipped.push(r);
                    continue;
                }
                let bag = &corpus.bags[bags[rng.gen_range(0..bags.len())]];
                let s = &bag.sentences[rng.gen_range(0..bag.sentences.len())];
                let mut pe = PromptExemplar::sentence(s, &bag.bag_id, bag.labels.clone());
                pe.candidate_relation = Some(r);
                pe.candidate_score = Some(score);
                exemplars.push(pe);
            }
            exemplars.reverse();
            Selection {
                query_id: query_id.to_owned(),
                strategy,
                candidates,
                skipped,
                relation_scope: RelationScope::FullOntology,
                exemplars,
            }
        }
        AblationVariant::NoIcl => Selection {
            query_id: query_id.to_owned(),
            strategy,
            candidates: candidate_relations(query_id, corpus, providers, config)?,
            skipped: Vec::new(),
            relation_scope: RelationScope::CandidatesOnly,
            exemplars: Vec::new(),
        },
    };
    Ok(sel)
}

/// Sentence-level stand-in for stages 2-3: the flattened sentence labelled
/// `r` maximizing `w_sim * sim(q, s) + w_conf * f(s, r)`, earliest on ties.
fn best_flat_for_relation<'a>(
    query_id: &str,
    r: RelationId,
    flat: &[FlatExample<'a>],
    providers: Providers<'_>,
    config: &ScoringConfig,
) -> Result<Option<FlatExample<'a>>, ProviderError> {
    let q = if config.w_sim > 0.0 {
        Some(providers.embeddings()?.vector(query_id)?)
    } else {
        None
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, ex) in flat.iter().enumerate() {
        if !ex.labels.contains(&r) {
            continue;
        }
        let id = &ex.sentence.sentence_id;
        let mut score = 0.0;
        if let Some(q) = q {
            score += config.w_sim * providers.embeddings()?.similarity_to(q, id)?;
        }
        if config.w_conf > 0.0 {
            score += config.w_conf * providers.scores()?.score(id, r)?;
        }
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((i, score));
        }
    }
    Ok(best.map(|(i, _)| flat[i]))
}
