//! Seeded synthetic corpora: an ontology, bags of tagged sentences, queries,
//! a confidence score matrix and sentence embeddings. Used for property
//! tests, examples and fixture generation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Bag, Corpus, LabelSet, QueryInstance, Relation, RelationId, RelationOntology, SentenceInstance};
use crate::providers::{EmbeddingIndex, ScoreMatrix};

const WORDS: &[&str] = &[
    "the", "of", "in", "said", "near", "former", "company", "city", "team", "founded", "born", "capital",
    "director", "president", "river", "new", "old", "member", "visited", "leader", "near", "office",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_relations: usize,
    pub n_bags: usize,
    pub max_sentences_per_bag: usize,
    pub max_labels_per_bag: usize,
    pub n_queries: usize,
    /// Probability that a bag (or query) is NA.
    pub na_prob: f64,
    pub dim: usize,
    /// When set, scores are drawn from `{0, 1/q, ..., 1}` and embedding
    /// coordinates from small integers, so ties are common.
    pub quantize: Option<u32>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_relations: 6,
            n_bags: 20,
            max_sentences_per_bag: 4,
            max_labels_per_bag: 2,
            n_queries: 10,
            na_prob: 0.2,
            dim: 8,
            quantize: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Corpus,
    pub queries: Vec<QueryInstance>,
    pub scores: ScoreMatrix,
    pub embeddings: EmbeddingIndex,
}

/// Builds a sentence `... head ... tail ...` (or tail first) and its spans.
fn sentence(rng: &mut ChaCha8Rng, id: String, head: &str, tail: &str) -> SentenceInstance {
    let filler = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<&str> {
        let n = rng.gen_range(lo..hi);
        (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect()
    };
    let head_first = rng.gen_bool(0.7);
    let (first, second) = if head_first { (head, tail) } else { (tail, head) };
    let pre = filler(rng, 0, 3);
    let mid = filler(rng, 1, 5);
    let post = filler(rng, 0, 4);
    let mut text = String::new();
    let push = |text: &mut String, w: &str| {
        if !text.is_empty() {
            text.push(' ');
        }
        let start = text.chars().count();
        text.push_str(w);
        (start, start + w.chars().count())
    };
    for w in pre {
        push(&mut text, w);
    }
    let a = push(&mut text, first);
    for w in mid {
        push(&mut text, w);
    }
    let b = push(&mut text, second);
    for w in post {
        push(&mut text, w);
    }
    push(&mut text, ".");
    let (h, t) = if head_first { (a, b) } else { (b, a) };
    SentenceInstance::new(id, text, h, t).expect("generated spans are disjoint")
}

fn labels(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> LabelSet {
    if rng.gen_bool(spec.na_prob) {
        return LabelSet::new();
    }
    let n = rng.gen_range(1..=spec.max_labels_per_bag.clamp(1, spec.n_relations));
    let mut ids: Vec<usize> = (0..spec.n_relations).collect();
    ids.shuffle(rng);
    ids[..n].iter().map(|&i| RelationId(i)).collect()
}

fn score_row(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<f64> {
    (0..spec.n_relations)
        .map(|_| match spec.quantize {
            Some(q) => rng.gen_range(0..=q) as f64 / q as f64,
            None => rng.gen::<f64>(),
        })
        .collect()
}

fn vector(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..spec.dim)
            .map(|_| match spec.quantize {
                Some(_) => rng.gen_range(-1..=1) as f64,
                None => rng.gen_range(-1.0..1.0),
            })
            .collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

pub fn ontology(n_relations: usize) -> RelationOntology {
    RelationOntology::new(
        (0..n_relations)
            .map(|i| Relation {
                name: format!("/synthetic/rel_{i}"),
                definition: format!("synthetic relation number {i}"),
            })
            .collect(),
    )
    .expect("distinct names")
}

pub fn generate(spec: &SynthSpec, seed: u64) -> SynthData {
    assert!(spec.n_relations > 0 && spec.max_sentences_per_bag > 0 && spec.dim > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ontology = ontology(spec.n_relations);
    let mut scores = ScoreMatrix::new(ontology.names(), []).expect("empty matrix");
    let mut embeddings = EmbeddingIndex::new();
    let mut add = |rng: &mut ChaCha8Rng, id: &str| {
        scores.insert(id.to_owned(), score_row(rng, spec)).expect("valid row");
        embeddings.insert(id.to_owned(), vector(rng, spec)).expect("valid vector");
    };
    let mut bags = Vec::with_capacity(spec.n_bags);
    for b in 0..spec.n_bags {
        let (head, tail) = (format!("Head{b}"), format!("Tail{b}"));
        let n = rng.gen_range(1..=spec.max_sentences_per_bag);
        let sentences: Vec<SentenceInstance> = (0..n)
            .map(|s| {
                let st = sentence(&mut rng, format!("b{b}s{s}"), &head, &tail);
                add(&mut rng, &st.sentence_id);
                st
            })
            .collect();
        bags.push(Bag {
            bag_id: format!("b{b}"),
            head_entity: head,
            tail_entity: tail,
            sentences,
            labels: labels(&mut rng, spec),
        });
    }
    let queries = (0..spec.n_queries)
        .map(|i| {
            let s = sentence(&mut rng, format!("q{i}"), &format!("QHead{i}"), &format!("QTail{i}"));
            add(&mut rng, &s.sentence_id);
            QueryInstance {
                query_id: s.sentence_id,
                text: s.text,
                head: s.head,
                tail: s.tail,
                gold: labels(&mut rng, spec),
            }
        })
        .collect();
    SynthData {
        corpus: Corpus::new(ontology, bags).expect("generated corpus is consistent"),
        queries,
        scores,
        embeddings,
    }
}
