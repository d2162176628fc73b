//! Scores two systems against gold labels, compares them with McNemar's
//! test, and prints recall@k of a confidence model.
//!
//!     cargo run --example evaluate

use hydre::corpus::{LabelSet, RelationId};
use hydre::evaluation::{mcnemar, paired_records, recall_curve, score, summary_table, Labelling};
use hydre::synth::{generate, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Copies `gold`, replacing each query's labels with a random set with
/// probability `noise`.
fn noisy(gold: &Labelling, n_rel: usize, noise: f64, seed: u64) -> Labelling {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gold.iter()
        .map(|(q, labels)| {
            let labels = if rng.gen_bool(noise) {
                (0..n_rel).filter(|_| rng.gen_bool(0.2)).map(RelationId).collect::<LabelSet>()
            } else {
                labels.clone()
            };
            (q.clone(), labels)
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate(&SynthSpec { n_queries: 200, n_relations: 8, ..Default::default() }, 3);
    let ontology = &data.corpus.ontology;
    let gold: Labelling = data.queries.iter().map(|q| (q.query_id.clone(), q.gold.clone())).collect();
    let strong = noisy(&gold, ontology.len(), 0.2, 1);
    let weak = noisy(&gold, ontology.len(), 0.4, 2);

    print!("{}", summary_table(&score(&gold, &strong, ontology)?, "strong"));
    print!("{}", summary_table(&score(&gold, &weak, ontology)?, "weak"));

    let m = mcnemar(&paired_records(&gold, &strong, &weak));
    println!(
        "\nMcNemar: b={} c={} statistic={:.3} p={:.4} ({})",
        m.b,
        m.c,
        m.statistic,
        m.p_value,
        if m.exact { "exact binomial" } else { "chi-square" }
    );

    println!("\nrecall@k of the (random) score matrix:");
    for (k, r) in recall_curve(&gold, &data.scores)? {
        println!("  k={k:<2} {r:.3}");
    }
    Ok(())
}
