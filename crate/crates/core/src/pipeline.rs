//! Strategy dispatch: turns a query into a [`Selection`] (exemplars plus
//! candidate metadata) and a selection into a prompt.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, AblationVariant, BaselineError, FlatExample};
use crate::corpus::{Corpus, LabelSet, QueryInstance, RelationId, RelationOntology, SentenceInstance};
use crate::prompting::{render_prompt, ExemplarBlock, PromptError, PromptTemplate, RelationScope};
use crate::providers::{ProviderError, ScoringConfig};
use crate::rng::query_rng;
use crate::selection::{
    build_exemplar_set, reduce_bag, reduced_sentences, select_bags, ExemplarSet, Providers,
    SelectionError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("selection for {query:?} references unknown {what} {id:?}")]
    UnknownReference {
        query: String,
        what: &'static str,
        id: String,
    },
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Hydre,
    /// Stages 1-2, then one best sentence per bag label.
    ReducedBag,
    ZeroShot,
    RandomK,
    TopkSim,
    Mmr,
    Ablation(AblationVariant),
}

impl Strategy {
    /// Whether the strategy reads confidence scores under `config`.
    pub fn needs_scores(self, config: &ScoringConfig) -> bool {
        match self {
            Strategy::Hydre | Strategy::ReducedBag => !config.similarity_only(),
            Strategy::Ablation(AblationVariant::NoConf) => false,
            Strategy::Ablation(v) => !(config.similarity_only() && v != AblationVariant::AllRelations),
            Strategy::ZeroShot | Strategy::RandomK | Strategy::TopkSim | Strategy::Mmr => false,
        }
    }

    /// Whether the strategy reads embeddings under `config`.
    pub fn needs_embeddings(self, config: &ScoringConfig) -> bool {
        match self {
            Strategy::Hydre | Strategy::ReducedBag => config.w_sim > 0.0,
            Strategy::TopkSim | Strategy::Mmr => true,
            Strategy::Ablation(AblationVariant::NoSim)
            | Strategy::Ablation(AblationVariant::NoIcl)
            | Strategy::Ablation(AblationVariant::RandomBagSentence) => config.similarity_only(),
            Strategy::Ablation(AblationVariant::NoConf) => true,
            Strategy::Ablation(_) => config.w_sim > 0.0,
            Strategy::ZeroShot | Strategy::RandomK => false,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Hydre => f.write_str("hydre"),
            Strategy::ReducedBag => f.write_str("reduced_bag"),
            Strategy::ZeroShot => f.write_str("zero_shot"),
            Strategy::RandomK => f.write_str("random_k"),
            Strategy::TopkSim => f.write_str("topk_sim"),
            Strategy::Mmr => f.write_str("mmr"),
            Strategy::Ablation(v) => write!(f, "ablation:{v}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "hydre" => Strategy::Hydre,
            "reduced_bag" => Strategy::ReducedBag,
            "zero_shot" => Strategy::ZeroShot,
            "random_k" => Strategy::RandomK,
            "topk_sim" => Strategy::TopkSim,
            "mmr" => Strategy::Mmr,
            other => match other.strip_prefix("ablation:") {
                Some(name) => Strategy::Ablation(
                    name.parse()
                        .map_err(|_| PipelineError::UnknownStrategy(s.to_owned()))?,
                ),
                None => return Err(PipelineError::UnknownStrategy(s.to_owned())),
            },
        })
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub mmr_alpha: f64,
    /// `None` runs MMR over the whole flattened corpus.
    pub mmr_pool_size: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            mmr_alpha: baselines::DEFAULT_MMR_ALPHA,
            mmr_pool_size: Some(baselines::DEFAULT_MMR_POOL),
        }
    }
}

/// An exemplar as it will be rendered: one sentence, or a passage of
/// sentences from the same bag.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptExemplar {
    pub sentence_ids: Vec<String>,
    pub source_bag_id: String,
    pub labels: LabelSet,
    pub candidate_relation: Option<RelationId>,
    pub candidate_score: Option<f64>,
}

impl PromptExemplar {
    pub fn sentence(s: &SentenceInstance, bag_id: &str, labels: LabelSet) -> Self {
        Self {
            sentence_ids: vec![s.sentence_id.clone()],
            source_bag_id: bag_id.to_owned(),
            labels,
            candidate_relation: None,
            candidate_score: None,
        }
    }
}

/// Everything chosen for one query, in prompt order.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub query_id: String,
    pub strategy: String,
    /// Candidate relations, most relevant first (empty for flat baselines).
    pub candidates: Vec<(RelationId, f64)>,
    pub skipped: Vec<RelationId>,
    pub relation_scope: RelationScope,
    pub exemplars: Vec<PromptExemplar>,
}

impl Selection {
    pub fn from_exemplar_set(set: &ExemplarSet, strategy: impl Into<String>) -> Self {
        Self {
            query_id: set.query_id.clone(),
            strategy: strategy.into(),
            candidates: set.candidates.clone(),
            skipped: set.skipped.clone(),
            relation_scope: RelationScope::FullOntology,
            exemplars: set
                .exemplars
                .iter()
                .map(|e| PromptExemplar {
                    sentence_ids: vec![e.sentence.sentence_id.clone()],
                    source_bag_id: e.source_bag_id.clone(),
                    labels: e.labels.clone(),
                    candidate_relation: Some(e.candidate_relation),
                    candidate_score: Some(e.candidate_score),
                })
                .collect(),
        }
    }

    fn flat(query_id: &str, strategy: Strategy, picks: Vec<FlatExample<'_>>) -> Self {
        Self {
            query_id: query_id.to_owned(),
            strategy: strategy.to_string(),
            candidates: Vec::new(),
            skipped: Vec::new(),
            relation_scope: RelationScope::FullOntology,
            exemplars: picks
                .into_iter()
                .map(|ex| PromptExemplar::sentence(ex.sentence, ex.source_bag_id, ex.labels.clone()))
                .collect(),
        }
    }

    pub fn candidate_ids(&self) -> Vec<RelationId> {
        self.candidates.iter().map(|&(r, _)| r).collect()
    }

    /// Resolves sentence ids against the corpus.
    pub fn blocks<'c>(&self, corpus: &'c Corpus) -> Result<Vec<ExemplarBlock<'c>>, PipelineError> {
        self.exemplars
            .iter()
            .map(|e| {
                let sentences = e
                    .sentence_ids
                    .iter()
                    .map(|id| {
                        corpus.sentence(id).ok_or_else(|| PipelineError::UnknownReference {
                            query: self.query_id.clone(),
                            what: "sentence",
                            id: id.clone(),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(ExemplarBlock {
                    sentences,
                    labels: e.labels.clone(),
                })
            })
            .collect()
    }

    pub fn to_record(&self, ontology: &RelationOntology) -> SelectionRecord {
        SelectionRecord {
            query_id: self.query_id.clone(),
            strategy: self.strategy.clone(),
            candidates: self
                .candidates
                .iter()
                .map(|&(r, score)| CandidateRecord {
                    relation: ontology.name(r).to_owned(),
                    score,
                })
                .collect(),
            skipped: self.skipped.iter().map(|&r| ontology.name(r).to_owned()).collect(),
            relation_scope: self.relation_scope,
            exemplars: self
                .exemplars
                .iter()
                .map(|e| ExemplarRecord {
                    sentence_id: e.sentence_ids[0].clone(),
                    passage: if e.sentence_ids.len() > 1 {
                        e.sentence_ids.clone()
                    } else {
                        Vec::new()
                    },
                    source_bag_id: e.source_bag_id.clone(),
                    candidate_relation: e.candidate_relation.map(|r| ontology.name(r).to_owned()),
                    candidate_score: e.candidate_score,
                    labels: ontology.label_names(&e.labels),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub relation: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarRecord {
    pub sentence_id: String,
    /// All sentence ids when the exemplar is a multi-sentence passage.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub passage: Vec<String>,
    pub source_bag_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_relation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_score: Option<f64>,
    pub labels: Vec<String>,
}

/// Line record of a selections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub query_id: String,
    pub strategy: String,
    #[serde(default)]
    pub candidates: Vec<CandidateRecord>,
    #[serde(default)]
    pub skipped: Vec<String>,
    #[serde(default)]
    pub relation_scope: RelationScope,
    pub exemplars: Vec<ExemplarRecord>,
}

impl SelectionRecord {
    pub fn into_selection(self, ontology: &RelationOntology) -> Result<Selection, PipelineError> {
        let query = self.query_id.clone();
        let rel = |name: &str| {
            ontology.id(name).ok_or_else(|| PipelineError::UnknownReference {
                query: query.clone(),
                what: "relation",
                id: name.to_owned(),
            })
        };
        let candidates = self
            .candidates
            .iter()
            .map(|c| Ok((rel(&c.relation)?, c.score)))
            .collect::<Result<Vec<_>, PipelineError>>()?;
        let skipped = self.skipped.iter().map(|s| rel(s)).collect::<Result<Vec<_>, _>>()?;
        let exemplars = self
            .exemplars
            .into_iter()
            .map(|e| {
                let labels = ontology.resolve_labels(&e.labels).map_err(|m| {
                    PipelineError::UnknownReference {
                        query: query.clone(),
                        what: "label",
                        id: m,
                    }
                })?;
                Ok(PromptExemplar {
                    sentence_ids: if e.passage.is_empty() {
                        vec![e.sentence_id]
                    } else {
                        e.passage
                    },
                    source_bag_id: e.source_bag_id,
                    labels,
                    candidate_relation: e.candidate_relation.as_deref().map(rel).transpose()?,
                    candidate_score: e.candidate_score,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        Ok(Selection {
            query_id: self.query_id,
            strategy: self.strategy,
            candidates,
            skipped,
            relation_scope: self.relation_scope,
            exemplars,
        })
    }
}

/// Stages 1-2 followed by per-label reduction of each chosen bag.
pub fn reduced_bag_selection(
    query_id: &str,
    corpus: &Corpus,
    providers: Providers<'_>,
    config: &ScoringConfig,
) -> Result<Selection, PipelineError> {
    let bags = select_bags(query_id, corpus, providers, config)?;
    let scores = providers.scores()?;
    let mut exemplars = Vec::with_capacity(bags.picks.len());
    for pick in &bags.picks {
        let bag = &corpus.bags[pick.bag];
        let reduced = reduce_bag(bag, scores)?;
        let labels: LabelSet = reduced.iter().map(|&(r, _)| r).collect();
        exemplars.push(PromptExemplar {
            sentence_ids: reduced_sentences(&reduced)
                .into_iter()
                .map(|i| bag.sentences[i].sentence_id.clone())
                .collect(),
            source_bag_id: bag.bag_id.clone(),
            labels,
            candidate_relation: Some(pick.relation),
            candidate_score: Some(pick.candidate_score),
        });
    }
    exemplars.reverse();
    Ok(Selection {
        query_id: query_id.to_owned(),
        strategy: Strategy::ReducedBag.to_string(),
        candidates: bags.candidates,
        skipped: bags.skipped,
        relation_scope: RelationScope::FullOntology,
        exemplars,
    })
}

/// Shared, read-only inputs for selecting exemplars.
pub struct SelectionInputs<'a> {
    pub corpus: &'a Corpus,
    pub flat: Vec<FlatExample<'a>>,
    pub providers: Providers<'a>,
    pub scoring: ScoringConfig,
    pub baseline: BaselineConfig,
}

impl<'a> SelectionInputs<'a> {
    pub fn new(
        corpus: &'a Corpus,
        providers: Providers<'a>,
        scoring: ScoringConfig,
        baseline: BaselineConfig,
    ) -> Self {
        Self {
            corpus,
            flat: baselines::flatten(corpus),
            providers,
            scoring,
            baseline,
        }
    }

    pub fn select(&self, strategy: Strategy, query_id: &str) -> Result<Selection, PipelineError> {
        let cfg = &self.scoring;
        let k = cfg.k;
        Ok(match strategy {
            Strategy::Hydre => Selection::from_exemplar_set(
                &build_exemplar_set(query_id, self.corpus, self.providers, cfg)?,
                strategy.to_string(),
            ),
            Strategy::ReducedBag => reduced_bag_selection(query_id, self.corpus, self.providers, cfg)?,
            Strategy::ZeroShot => Selection::flat(query_id, strategy, Vec::new()),
            Strategy::RandomK => {
                let mut rng = query_rng(cfg.seed, query_id, "random_k");
                let picks = baselines::random_k_with(&self.flat, k.min(self.flat.len()), &mut rng)?;
                Selection::flat(query_id, strategy, picks)
            }
            Strategy::TopkSim => {
                let picks = baselines::topk_sim(query_id, &self.flat, self.providers.embeddings()?, k)?;
                Selection::flat(query_id, strategy, picks)
            }
            Strategy::Mmr => {
                let picks = baselines::mmr_select(
                    query_id,
                    &self.flat,
                    self.providers.embeddings()?,
                    k,
                    self.baseline.mmr_alpha,
                    self.baseline.mmr_pool_size,
                )?;
                Selection::flat(query_id, strategy, picks)
            }
            Strategy::Ablation(v) => {
                baselines::ablation_variant(v, query_id, self.corpus, self.providers, cfg)?
            }
        })
    }
}

/// Renders the prompt for a query under its selection. A selection that
/// asks for candidate-only scope (the no-exemplar ablation) overrides the
/// template's scope.
pub fn render_selection(
    query: &QueryInstance,
    selection: &Selection,
    corpus: &Corpus,
    template: &PromptTemplate,
) -> Result<String, PipelineError> {
    let blocks = selection.blocks(corpus)?;
    let scoped;
    let template = if selection.relation_scope == RelationScope::CandidatesOnly {
        scoped = PromptTemplate {
            relation_scope: RelationScope::CandidatesOnly,
            ..template.clone()
        };
        &scoped
    } else {
        template
    };
    Ok(render_prompt(
        &query.as_sentence(),
        &blocks,
        &selection.candidate_ids(),
        &corpus.ontology,
        template,
    )?)
}
