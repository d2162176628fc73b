//! Bag-structured training corpus, relation ontology and test queries.
//!
//! All three are stored as line-delimited JSON. Entity mentions are kept as
//! character spans (Unicode scalar offsets) and only turned into inline tags
//! when a prompt is rendered.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_NA_SYMBOL: &str = "NA";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{context}: {message}")]
    Invalid { context: String, message: String },
}

impl CorpusError {
    fn invalid(context: impl Into<String>, message: impl Into<String>) -> Self {
        CorpusError::Invalid {
            context: context.into(),
            message: message.into(),
        }
    }
}

/// Index of a relation in its ontology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub usize);

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// A set of relations. The empty set is NA.
pub type LabelSet = BTreeSet<RelationId>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub definition: String,
}

/// Ordered relation names with definitions. The order is the index space of
/// every score vector; NA is not part of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationOntology {
    relations: Vec<Relation>,
    na_symbol: String,
    by_name: HashMap<String, RelationId>,
}

impl RelationOntology {
    pub fn new(relations: Vec<Relation>) -> Result<Self, CorpusError> {
        Self::with_na_symbol(relations, DEFAULT_NA_SYMBOL)
    }

    pub fn with_na_symbol(
        relations: Vec<Relation>,
        na_symbol: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let na_symbol = na_symbol.into();
        if na_symbol.is_empty() {
            return Err(CorpusError::invalid("ontology", "empty NA symbol"));
        }
        let mut by_name = HashMap::with_capacity(relations.len());
        for (i, rel) in relations.iter().enumerate() {
            if rel.name.is_empty() {
                return Err(CorpusError::invalid(
                    format!("ontology relation {i}"),
                    "empty relation name",
                ));
            }
            if rel.definition.trim().is_empty() {
                return Err(CorpusError::invalid(
                    format!("ontology relation {:?}", rel.name),
                    "empty definition",
                ));
            }
            if rel.name == na_symbol {
                return Err(CorpusError::invalid(
                    format!("ontology relation {:?}", rel.name),
                    "NA symbol listed as a relation",
                ));
            }
            if by_name.insert(rel.name.clone(), RelationId(i)).is_some() {
                return Err(CorpusError::invalid(
                    format!("ontology relation {:?}", rel.name),
                    "duplicate relation name",
                ));
            }
        }
        for (a, b) in prefix_collisions(&relations) {
            log::warn!("relation name {a:?} is a substring of {b:?}");
        }
        Ok(Self {
            relations,
            na_symbol,
            by_name,
        })
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn ids(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relations.len()).map(RelationId)
    }

    pub fn na_symbol(&self) -> &str {
        &self.na_symbol
    }

    pub fn name(&self, id: RelationId) -> &str {
        &self.relations[id.0].name
    }

    pub fn definition(&self, id: RelationId) -> &str {
        &self.relations[id.0].definition
    }

    pub fn id(&self, name: &str) -> Option<RelationId> {
        self.by_name.get(name).copied()
    }

    pub fn names(&self) -> Vec<String> {
        self.relations.iter().map(|r| r.name.clone()).collect()
    }

    /// Resolves a list of label names. `[]` and `[NA]` both mean NA; NA
    /// alongside a relation is rejected.
    pub fn resolve_labels<S: AsRef<str>>(&self, names: &[S]) -> Result<LabelSet, String> {
        let mut set = LabelSet::new();
        let mut saw_na = false;
        for name in names {
            let name = name.as_ref();
            if name == self.na_symbol {
                saw_na = true;
            } else if let Some(id) = self.id(name) {
                set.insert(id);
            } else {
                return Err(format!("unknown relation {name:?}"));
            }
        }
        if saw_na && !set.is_empty() {
            return Err(format!(
                "{} combined with other relations",
                self.na_symbol
            ));
        }
        Ok(set)
    }

    /// Label names in ontology order; NA renders as the NA symbol.
    pub fn label_names(&self, labels: &LabelSet) -> Vec<String> {
        if labels.is_empty() {
            vec![self.na_symbol.clone()]
        } else {
            labels.iter().map(|&r| self.name(r).to_owned()).collect()
        }
    }
}

fn prefix_collisions(relations: &[Relation]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for a in relations {
        for b in relations {
            if a.name != b.name && b.name.contains(&a.name) {
                out.push((a.name.clone(), b.name.clone()));
            }
        }
    }
    out
}

/// Half-open character span `[start, end)` over a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntitySpan {
    /// Builds a span over `text`, checking bounds in Unicode scalar values.
    pub fn new(text: &str, start: usize, end: usize) -> Result<Self, String> {
        if start >= end {
            return Err(format!("empty or inverted span [{start}, {end})"));
        }
        let len = text.chars().count();
        if end > len {
            return Err(format!("span [{start}, {end}) exceeds text length {len}"));
        }
        let surface: String = text.chars().skip(start).take(end - start).collect();
        Ok(Self {
            start,
            end,
            surface,
        })
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceInstance {
    pub sentence_id: String,
    pub text: String,
    pub head: EntitySpan,
    pub tail: EntitySpan,
}

impl SentenceInstance {
    pub fn new(
        sentence_id: impl Into<String>,
        text: impl Into<String>,
        head: (usize, usize),
        tail: (usize, usize),
    ) -> Result<Self, String> {
        let text = text.into();
        let head = EntitySpan::new(&text, head.0, head.1).map_err(|e| format!("head: {e}"))?;
        let tail = EntitySpan::new(&text, tail.0, tail.1).map_err(|e| format!("tail: {e}"))?;
        if head.overlaps(&tail) {
            return Err("head and tail spans overlap".to_owned());
        }
        Ok(Self {
            sentence_id: sentence_id.into(),
            text,
            head,
            tail,
        })
    }
}

/// An entity pair's sentences with the pair's distant labelset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub bag_id: String,
    pub head_entity: String,
    pub tail_entity: String,
    pub sentences: Vec<SentenceInstance>,
    pub labels: LabelSet,
}

impl Bag {
    pub fn is_na(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryInstance {
    pub query_id: String,
    pub text: String,
    pub head: EntitySpan,
    pub tail: EntitySpan,
    /// Empty means NA.
    pub gold: LabelSet,
}

impl QueryInstance {
    pub fn is_na(&self) -> bool {
        self.gold.is_empty()
    }

    pub fn as_sentence(&self) -> SentenceInstance {
        SentenceInstance {
            sentence_id: self.query_id.clone(),
            text: self.text.clone(),
            head: self.head.clone(),
            tail: self.tail.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Wire records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyRecord {
    pub name: String,
    pub definition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub sentence_id: String,
    pub text: String,
    pub head_span: [usize; 2],
    pub tail_span: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagRecord {
    pub bag_id: String,
    pub head: String,
    pub tail: String,
    pub relations: Vec<String>,
    pub sentences: Vec<SentenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub head_span: [usize; 2],
    pub tail_span: [usize; 2],
    pub gold: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_na: bool,
}

impl From<&SentenceInstance> for SentenceRecord {
    fn from(s: &SentenceInstance) -> Self {
        Self {
            sentence_id: s.sentence_id.clone(),
            text: s.text.clone(),
            head_span: [s.head.start, s.head.end],
            tail_span: [s.tail.start, s.tail.end],
        }
    }
}

impl BagRecord {
    pub fn from_bag(bag: &Bag, ontology: &RelationOntology) -> Self {
        Self {
            bag_id: bag.bag_id.clone(),
            head: bag.head_entity.clone(),
            tail: bag.tail_entity.clone(),
            relations: ontology.label_names(&bag.labels),
            sentences: bag.sentences.iter().map(SentenceRecord::from).collect(),
        }
    }

    pub fn into_bag(self, ontology: &RelationOntology) -> Result<Bag, String> {
        if self.sentences.is_empty() {
            return Err(format!("bag {:?} has no sentences", self.bag_id));
        }
        if self.relations.is_empty() {
            return Err(format!("bag {:?} has an empty labelset", self.bag_id));
        }
        let labels = ontology
            .resolve_labels(&self.relations)
            .map_err(|e| format!("bag {:?}: {e}", self.bag_id))?;
        let sentences = self
            .sentences
            .into_iter()
            .map(|s| {
                let id = s.sentence_id.clone();
                SentenceInstance::new(
                    s.sentence_id,
                    s.text,
                    (s.head_span[0], s.head_span[1]),
                    (s.tail_span[0], s.tail_span[1]),
                )
                .map_err(|e| format!("bag {:?} sentence {id:?}: {e}", self.bag_id))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Bag {
            bag_id: self.bag_id,
            head_entity: self.head,
            tail_entity: self.tail,
            sentences,
            labels,
        })
    }
}

impl QueryRecord {
    pub fn from_query(q: &QueryInstance, ontology: &RelationOntology) -> Self {
        Self {
            query_id: q.query_id.clone(),
            text: q.text.clone(),
            head_span: [q.head.start, q.head.end],
            tail_span: [q.tail.start, q.tail.end],
            gold: q
                .gold
                .iter()
                .map(|&r| ontology.name(r).to_owned())
                .collect(),
            is_na: q.is_na(),
        }
    }

    pub fn into_query(self, ontology: &RelationOntology) -> Result<QueryInstance, String> {
        let ctx = format!("query {:?}", self.query_id);
        if self.gold.is_empty() && !self.is_na {
            return Err(format!("{ctx}: empty gold list without is_na"));
        }
        let gold = ontology
            .resolve_labels(&self.gold)
            .map_err(|e| format!("{ctx}: {e}"))?;
        if self.is_na && !gold.is_empty() {
            return Err(format!("{ctx}: is_na set but gold lists relations"));
        }
        let s = SentenceInstance::new(
            self.query_id.clone(),
            self.text,
            (self.head_span[0], self.head_span[1]),
            (self.tail_span[0], self.tail_span[1]),
        )
        .map_err(|e| format!("{ctx}: {e}"))?;
        Ok(QueryInstance {
            query_id: self.query_id,
            text: s.text,
            head: s.head,
            tail: s.tail,
            gold,
        })
    }
}

// ---------------------------------------------------------------------------
// Line-delimited JSON helpers

/// Reads one JSON record per non-blank line, handing each to `f` along with
/// its 1-based line number.
pub fn read_jsonl<T, F>(path: &Path, mut f: F) -> Result<(), CorpusError>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(usize, T) -> Result<(), CorpusError>,
{
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            path: path.to_owned(),
            line: i + 1,
            source,
        })?;
        f(i + 1, record)?;
    }
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn at(path: &Path, line: usize) -> String {
    format!("{}:{line}", path.display())
}

pub fn load_ontology(path: &Path) -> Result<RelationOntology, CorpusError> {
    let mut relations = Vec::new();
    let mut seen = HashSet::new();
    read_jsonl(path, |line, r: OntologyRecord| {
        if !seen.insert(r.name.clone()) {
            return Err(CorpusError::invalid(
                at(path, line),
                format!("duplicate relation name {:?}", r.name),
            ));
        }
        if r.definition.trim().is_empty() {
            return Err(CorpusError::invalid(
                at(path, line),
                format!("empty definition for {:?}", r.name),
            ));
        }
        relations.push(Relation {
            name: r.name,
            definition: r.definition,
        });
        Ok(())
    })?;
    RelationOntology::new(relations).map_err(|e| match e {
        CorpusError::Invalid { context, message } => {
            CorpusError::invalid(format!("{}: {context}", path.display()), message)
        }
        other => other,
    })
}

pub fn load_bags(path: &Path, ontology: &RelationOntology) -> Result<Vec<Bag>, CorpusError> {
    let mut bags = Vec::new();
    let mut bag_ids = HashSet::new();
    let mut sentence_ids = HashSet::new();
    read_jsonl(path, |line, r: BagRecord| {
        let bag = r
            .into_bag(ontology)
            .map_err(|m| CorpusError::invalid(at(path, line), m))?;
        if !bag_ids.insert(bag.bag_id.clone()) {
            return Err(CorpusError::invalid(
                at(path, line),
                format!("duplicate bag id {:?}", bag.bag_id),
            ));
        }
        for s in &bag.sentences {
            if !sentence_ids.insert(s.sentence_id.clone()) {
                return Err(CorpusError::invalid(
                    at(path, line),
                    format!("duplicate sentence id {:?}", s.sentence_id),
                ));
            }
        }
        bags.push(bag);
        Ok(())
    })?;
    Ok(bags)
}

pub fn load_queries(
    path: &Path,
    ontology: &RelationOntology,
) -> Result<Vec<QueryInstance>, CorpusError> {
    let mut queries = Vec::new();
    let mut ids = HashSet::new();
    read_jsonl(path, |line, r: QueryRecord| {
        let q = r
            .into_query(ontology)
            .map_err(|m| CorpusError::invalid(at(path, line), m))?;
        if !ids.insert(q.query_id.clone()) {
            return Err(CorpusError::invalid(
                at(path, line),
                format!("duplicate query id {:?}", q.query_id),
            ));
        }
        queries.push(q);
        Ok(())
    })?;
    Ok(queries)
}

pub fn save_ontology(path: &Path, ontology: &RelationOntology) -> Result<(), CorpusError> {
    let records: Vec<_> = ontology
        .relations()
        .iter()
        .map(|r| OntologyRecord {
            name: r.name.clone(),
            definition: r.definition.clone(),
        })
        .collect();
    write_jsonl(path, &records)
}

pub fn save_bags(path: &Path, bags: &[Bag], ontology: &RelationOntology) -> Result<(), CorpusError> {
    let records: Vec<_> = bags
        .iter()
        .map(|b| BagRecord::from_bag(b, ontology))
        .collect();
    write_jsonl(path, &records)
}

pub fn save_queries(
    path: &Path,
    queries: &[QueryInstance],
    ontology: &RelationOntology,
) -> Result<(), CorpusError> {
    let records: Vec<_> = queries
        .iter()
        .map(|q| QueryRecord::from_query(q, ontology))
        .collect();
    write_jsonl(path, &records)
}

/// For every relation, positions (into `bags`) of the bags whose labelset
/// contains it, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationIndex {
    lists: Vec<Vec<usize>>,
}

impl RelationIndex {
    pub fn get(&self, r: RelationId) -> &[usize] {
        &self.lists[r.0]
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// The index as relation name → bag ids.
    pub fn to_named(&self, bags: &[Bag], ontology: &RelationOntology) -> Vec<(String, Vec<String>)> {
        ontology
            .ids()
            .map(|r| {
                let ids = self.get(r).iter().map(|&i| bags[i].bag_id.clone()).collect();
                (ontology.name(r).to_owned(), ids)
            })
            .collect()
    }
}

pub fn index_bags_by_relation(bags: &[Bag], ontology: &RelationOntology) -> RelationIndex {
    let mut lists = vec![Vec::new(); ontology.len()];
    for (i, bag) in bags.iter().enumerate() {
        for r in &bag.labels {
            lists[r.0].push(i);
        }
    }
    RelationIndex { lists }
}

/// Loaded, validated training data plus lookup tables.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub ontology: RelationOntology,
    pub bags: Vec<Bag>,
    pub index: RelationIndex,
    sentence_pos: HashMap<String, (usize, usize)>,
    bag_pos: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(ontology: RelationOntology, bags: Vec<Bag>) -> Result<Self, CorpusError> {
        let mut sentence_pos = HashMap::new();
        let mut bag_pos = HashMap::new();
        for (b, bag) in bags.iter().enumerate() {
            if bag.sentences.is_empty() {
                return Err(CorpusError::invalid(
                    format!("bag {:?}", bag.bag_id),
                    "no sentences",
                ));
            }
            if let Some(r) = bag.labels.iter().find(|r| r.0 >= ontology.len()) {
                return Err(CorpusError::invalid(
                    format!("bag {:?}", bag.bag_id),
                    format!("label {r} outside the ontology"),
                ));
            }
            if bag_pos.insert(bag.bag_id.clone(), b).is_some() {
                return Err(CorpusError::invalid(
                    format!("bag {:?}", bag.bag_id),
                    "duplicate bag id",
                ));
            }
            for (s, sent) in bag.sentences.iter().enumerate() {
                if sentence_pos.insert(sent.sentence_id.clone(), (b, s)).is_some() {
                    return Err(CorpusError::invalid(
                        format!("sentence {:?}", sent.sentence_id),
                        "duplicate sentence id",
                    ));
                }
            }
        }
        let index = index_bags_by_relation(&bags, &ontology);
        Ok(Self {
            ontology,
            bags,
            index,
            sentence_pos,
            bag_pos,
        })
    }

    pub fn load(ontology_path: &Path, bags_path: &Path) -> Result<Self, CorpusError> {
        let ontology = load_ontology(ontology_path)?;
        let bags = load_bags(bags_path, &ontology)?;
        Self::new(ontology, bags)
    }

    pub fn bag(&self, bag_id: &str) -> Option<&Bag> {
        self.bag_pos.get(bag_id).map(|&i| &self.bags[i])
    }

    pub fn bag_position(&self, bag_id: &str) -> Option<usize> {
        self.bag_pos.get(bag_id).copied()
    }

    pub fn sentence(&self, sentence_id: &str) -> Option<&SentenceInstance> {
        self.sentence_pos
            .get(sentence_id)
            .map(|&(b, s)| &self.bags[b].sentences[s])
    }

    pub fn num_sentences(&self) -> usize {
        self.sentence_pos.len()
    }

    /// Fraction of bags labelled NA. Reported, never enforced.
    pub fn na_fraction(&self) -> f64 {
        if self.bags.is_empty() {
            return 0.0;
        }
        self.bags.iter().filter(|b| b.is_na()).count() as f64 / self.bags.len() as f64
    }
}
