//! Flat retrieval baselines on a synthetic corpus: random-k, top-k by
//! similarity and MMR at a few trade-off values.
//!
//!     cargo run --example baselines

use hydre::baselines::{flatten, mmr_select, random_k, topk_sim, FlatExample};
use hydre::synth::{generate, SynthSpec};

fn show(name: &str, picks: &[FlatExample<'_>]) {
    let ids: Vec<&str> = picks.iter().map(|e| e.sentence.sentence_id.as_str()).collect();
    println!("{name:>12}: {}", ids.join(" "));
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate(&SynthSpec { n_bags: 40, ..Default::default() }, 5);
    let flat = flatten(&data.corpus);
    let q = &data.queries[0].query_id;
    let k = 5;
    println!("{} candidate sentences, query {q}\n", flat.len());
    show("random_k", &random_k(&flat, k, 42)?);
    show("topk_sim", &topk_sim(q, &flat, &data.embeddings, k)?);
    for alpha in [1.0, 0.7, 0.3, 0.0] {
        show(&format!("mmr a={alpha}"), &mmr_select(q, &flat, &data.embeddings, k, alpha, Some(100))?);
    }
    Ok(())
}
