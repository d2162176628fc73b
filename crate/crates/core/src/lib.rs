//! Hybrid in-context exemplar selection for relation extraction under
//! distant supervision.
//!
//! A bag is every sentence mentioning one entity pair, labelled with the
//! relations a knowledge base asserts for that pair. For each query the
//! pipeline picks the top-k candidate relations by a supervised model's
//! confidence, retrieves for each candidate the bag that best balances
//! embedding similarity to the query against confidence, reduces that bag to
//! its single most informative sentence, and renders the result as a few-shot
//! prompt for an LLM judge whose answer is parsed back into relation labels.
//!
//! ```no_run
//! use hydre::corpus::Corpus;
//! use hydre::providers::{load_embeddings, load_scores, ScoringConfig};
//! use hydre::selection::{build_exemplar_set, Providers};
//!
//! let corpus = Corpus::load("ontology.jsonl".as_ref(), "bags.jsonl".as_ref())?;
//! let scores = load_scores("scores.jsonl".as_ref(), &corpus.ontology)?;
//! let emb = load_embeddings("embeddings.jsonl".as_ref())?;
//! let providers = Providers::new(Some(&scores), Some(&emb));
//! let queries = hydre::corpus::load_queries("queries.jsonl".as_ref(), &corpus.ontology)?;
//! let set = build_exemplar_set(&queries[0].query_id, &corpus, providers, &ScoringConfig::default())?;
//! println!("{} exemplars", set.exemplars.len());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod baselines;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod judge;
pub mod pipeline;
pub mod prompting;
pub mod providers;
pub mod retry;
pub mod rng;
pub mod selection;
pub mod synth;
