//! Filling an embedding index from an encoder service. The encoder here is
//! an in-process bag-of-characters model; `HttpEmbeddingService` plugs in
//! the same way for a real endpoint.
//!
//!     cargo run --example embeddings_service

use hydre::providers::{fetch_embeddings, load_embeddings, EmbeddingIndex, EmbeddingService, ProviderError};

struct CharCounts;

impl EmbeddingService for CharCounts {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0.0; 26];
                for c in t.to_ascii_lowercase().bytes().filter(u8::is_ascii_lowercase) {
                    v[(c - b'a') as usize] += 1.0;
                }
                v
            })
            .collect())
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let items: Vec<(String, String)> = [
        ("s1", "Nokia began as a paper mill near Espoo ."),
        ("s2", "Brian Henson , the son of Jim Henson , is chairman ."),
        ("s3", "Nokia , based in Espoo , Finland , said the deal was final ."),
        ("q", "Chris DeWolfe , the chief executive of MySpace , said ."),
    ]
    .iter()
    .map(|(id, t)| (id.to_string(), t.to_string()))
    .collect();

    let path = std::env::temp_dir().join(format!("hydre-embeddings-{}.jsonl", std::process::id()));
    let mut index = EmbeddingIndex::new();
    let fetched = fetch_embeddings(&items, &CharCounts, &mut index, Some(&path))?;
    println!("fetched {fetched} vectors (dim {})", index.dim());
    // a second pass only asks for what is missing
    println!("fetched again: {}", fetch_embeddings(&items, &CharCounts, &mut index, Some(&path))?);

    let reloaded = load_embeddings(&path)?;
    for (a, b) in [("s1", "s3"), ("s1", "s2"), ("q", "s3")] {
        println!("sim({a}, {b}) = {:.3}", reloaded.similarity(a, b)?);
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
