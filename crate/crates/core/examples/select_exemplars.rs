//! Three-stage exemplar selection for one query of the bundled NYT-style
//! fixture: candidate relations, the bag chosen for each, and the sentence
//! that represents it.
//!
//!     cargo run --example select_exemplars [query_id]

use std::path::Path;

use hydre::corpus::{load_queries, Corpus};
use hydre::providers::{load_embeddings, load_scores, ScoringConfig};
use hydre::selection::{build_exemplar_set, Providers};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/nyt");
    let corpus = Corpus::load(&dir.join("ontology.jsonl"), &dir.join("bags.jsonl"))?;
    let queries = load_queries(&dir.join("queries.jsonl"), &corpus.ontology)?;
    let scores = load_scores(&dir.join("scores.jsonl"), &corpus.ontology)?;
    let embeddings = load_embeddings(&dir.join("embeddings.jsonl"))?;

    let qid = std::env::args().nth(1).unwrap_or_else(|| "q01".into());
    let query = queries.iter().find(|q| q.query_id == qid).ok_or("no such query")?;
    println!("query {qid}: {}", query.text);
    println!("gold: {:?}\n", corpus.ontology.label_names(&query.gold));

    let config = ScoringConfig::default();
    let set = build_exemplar_set(&qid, &corpus, Providers::new(Some(&scores), Some(&embeddings)), &config)?;
    println!("candidates (k = {}):", config.k);
    for (r, f) in &set.candidates {
        println!("  {f:.3}  {}", corpus.ontology.name(*r));
    }
    for r in &set.skipped {
        println!("  no bag carries {}, skipped", corpus.ontology.name(*r));
    }
    println!("\nexemplars in prompt order:");
    for ex in &set.exemplars {
        println!(
            "  [{}] {} -> {:?}\n      {}",
            ex.source_bag_id,
            corpus.ontology.name(ex.candidate_relation),
            corpus.ontology.label_names(&ex.labels),
            ex.sentence.text
        );
    }
    Ok(())
}
