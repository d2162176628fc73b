//! Brute-force reference implementations and randomized checks shared by the
//! integration tests and the acceptance runner.
//!
//! The oracles deliberately avoid the library's indexes and helpers: they
//! scan every bag, recompute every pooled score from raw rows, and break ties
//! by explicit full enumeration. The only shared primitive is the embedding
//! similarity itself, which has its own raw-cosine check below.

#![allow(dead_code)]

pub mod nyt;

use std::collections::{BTreeMap, BTreeSet};

use hydre::baselines::{flatten, mmr_select, topk_sim};
use hydre::corpus::{Bag, Corpus, LabelSet, RelationId};
use hydre::evaluation::{confusion_pairs, recall_at_k, Labelling};
use hydre::providers::{EmbeddingIndex, ScoreMatrix, ScoringConfig};
use hydre::selection::{
    build_exemplar_set, reduce_bag, select_bag, select_candidates, select_sentence, Providers,
};
use hydre::synth::{generate, SynthData, SynthSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

// ---------------------------------------------------------------------------
// oracles

/// Raw cosine mapped to [0, 1], straight from the definition.
pub fn raw_cosine01(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (1.0 + dot / (nu * nv)) / 2.0
}

/// Position of `r` in the query's ranking: how many relations beat it
/// (higher score, or equal score and lower index).
pub fn oracle_rank(row: &[f64], r: usize) -> usize {
    (0..row.len())
        .filter(|&o| row[o] > row[r] || (row[o] == row[r] && o < r))
        .count()
}

/// Top-k relations by repeated "best remaining" scans.
pub fn oracle_candidates(row: &[f64], k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k.min(row.len()) {
        let mut best = None;
        for r in 0..row.len() {
            if chosen.contains(&r) {
                continue;
            }
            best = match best {
                None => Some(r),
                Some(b) if row[r] > row[b] => Some(r),
                keep => keep,
            };
        }
        chosen.push(best.unwrap());
    }
    chosen
}

fn bag_max<F: Fn(&str) -> f64>(bag: &Bag, f: F) -> f64 {
    let vals: Vec<f64> = bag.sentences.iter().map(|s| f(&s.sentence_id)).collect();
    vals.iter().cloned().fold(vals[0], f64::max)
}

/// Best bag for `r`, scanning the whole corpus (not the relation index).
pub fn oracle_bag(
    q: &str,
    r: usize,
    corpus: &Corpus,
    scores: &ScoreMatrix,
    emb: &EmbeddingIndex,
    w_sim: f64,
    w_conf: f64,
) -> Option<usize> {
    let scored: Vec<(usize, f64)> = corpus
        .bags
        .iter()
        .enumerate()
        .filter(|(_, b)| b.labels.contains(&RelationId(r)))
        .map(|(i, b)| {
            let sim = bag_max(b, |s| emb.similarity(q, s).unwrap());
            let conf = bag_max(b, |s| scores.row(s).unwrap()[r]);
            (i, w_sim * sim + w_conf * conf)
        })
        .collect();
    let top = scored.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    scored.iter().find(|&&(_, v)| v == top).map(|&(i, _)| i)
}

/// Most label-covering sentence, then highest summed confidence, then
/// earliest.
pub fn oracle_sentence(bag: &Bag, scores: &ScoreMatrix, t: f64) -> usize {
    let labels: Vec<usize> = bag.labels.iter().map(|r| r.0).collect();
    let keys: Vec<(usize, f64)> = bag
        .sentences
        .iter()
        .map(|s| {
            let row = scores.row(&s.sentence_id).unwrap();
            let cov = labels.iter().filter(|&&r| row[r] > t).count();
            let mut total = 0.0;
            for &r in &labels {
                total += row[r];
            }
            (cov, total)
        })
        .collect();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    // stable sort keeps in-bag order among equal keys
    order.sort_by(|&a, &b| {
        keys[b].0.cmp(&keys[a].0).then(keys[b].1.partial_cmp(&keys[a].1).unwrap())
    });
    order[0]
}

/// For each bag label (ascending), the earliest sentence with the label's
/// maximum score.
pub fn oracle_reduce(bag: &Bag, scores: &ScoreMatrix) -> Vec<(usize, usize)> {
    bag.labels
        .iter()
        .map(|r| {
            let vals: Vec<f64> = bag.sentences.iter().map(|s| scores.row(&s.sentence_id).unwrap()[r.0]).collect();
            let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (r.0, vals.iter().position(|&v| v == top).unwrap())
        })
        .collect()
}

/// Algorithm 1 end to end: `(candidate relation, bag id, sentence id)` in
/// prompt order (least relevant candidate first).
pub fn oracle_exemplars(q: &str, d: &SynthData, cfg: &ScoringConfig) -> Vec<(usize, String, String)> {
    let row = d.scores.row(q).unwrap();
    let mut out = Vec::new();
    for r in oracle_candidates(row, cfg.k) {
        if let Some(b) = oracle_bag(q, r, &d.corpus, &d.scores, &d.embeddings, cfg.w_sim, cfg.w_conf) {
            let bag = &d.corpus.bags[b];
            let s = oracle_sentence(bag, &d.scores, cfg.threshold);
            out.push((r, bag.bag_id.clone(), bag.sentences[s].sentence_id.clone()));
        }
    }
    out.reverse();
    out
}

/// Flat sentence ids ordered by similarity to `q`, most similar first,
/// ties by corpus order, via repeated maximum scans.
pub fn oracle_topk(q: &str, ids: &[String], emb: &EmbeddingIndex, k: usize) -> Vec<usize> {
    let sims: Vec<f64> = ids.iter().map(|s| emb.similarity(q, s).unwrap()).collect();
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < k.min(ids.len()) {
        let mut best: Option<usize> = None;
        for i in 0..ids.len() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| sims[i] > sims[b]) {
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

/// Greedy MMR, recomputing each candidate's redundancy from scratch.
pub fn oracle_mmr(q: &str, ids: &[String], emb: &EmbeddingIndex, k: usize, alpha: f64, pool: usize) -> Vec<usize> {
    let pool = oracle_topk(q, ids, emb, pool);
    let mut picked: Vec<usize> = Vec::new();
    while picked.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for &i in &pool {
            if picked.contains(&i) {
                continue;
            }
            let sim_q = emb.similarity(q, &ids[i]).unwrap();
            let value = if picked.is_empty() {
                sim_q
            } else {
                let red = picked
                    .iter()
                    .map(|&j| emb.similarity(&ids[i], &ids[j]).unwrap())
                    .fold(f64::NEG_INFINITY, f64::max);
                alpha * sim_q - (1.0 - alpha) * red
            };
            if best.is_none_or(|(_, b)| value > b) {
                best = Some((i, value));
            }
        }
        picked.push(best.unwrap().0);
    }
    picked
}

pub fn oracle_recall(gold: &Labelling, scores: &ScoreMatrix, k: usize) -> f64 {
    let mut hit = 0;
    let mut total = 0;
    for (q, labels) in gold {
        for r in labels {
            total += 1;
            if oracle_rank(scores.row(q).unwrap(), r.0) < k {
                hit += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// `[aa, ab, ba, bb]` by counting every (gold fact, predicted fact) pair.
pub fn oracle_confusion(gold: &Labelling, pred: &Labelling, a: usize, b: usize) -> [usize; 4] {
    let mut cells = [0; 4];
    for (q, g) in gold {
        let Some(p) = pred.get(q) else { continue };
        for gr in g {
            for pr in p {
                let cell = match (gr.0, pr.0) {
                    (x, y) if x == a && y == a => 0,
                    (x, y) if x == a && y == b => 1,
                    (x, y) if x == b && y == a => 2,
                    (x, y) if x == b && y == b => 3,
                    _ => continue,
                };
                cells[cell] += 1;
            }
        }
    }
    cells
}

/// Exact two-sided binomial p for McNemar with `b`, `c` discordant pairs,
/// from integer binomial coefficients.
pub fn oracle_binomial_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    let m = b.min(c);
    let mut coef: u128 = 1;
    let mut tail: u128 = 0;
    for i in 0..=n {
        if i <= m {
            tail += coef;
        }
        coef = coef * (n - i) as u128 / (i + 1) as u128;
    }
    let p = tail as f64 / 2f64.powi(n as i32);
    (2.0 * p).min(1.0)
}

// ---------------------------------------------------------------------------
// random instances

pub fn random_spec(rng: &mut ChaCha8Rng) -> SynthSpec {
    SynthSpec {
        n_relations: rng.gen_range(1..=10),
        n_bags: rng.gen_range(1..=30),
        max_sentences_per_bag: rng.gen_range(1..=5),
        max_labels_per_bag: rng.gen_range(1..=3),
        n_queries: rng.gen_range(1..=4),
        na_prob: 0.2,
        dim: rng.gen_range(2..=6),
        quantize: if rng.gen_bool(0.5) { Some(rng.gen_range(2..=5)) } else { None },
    }
}

pub fn random_instance(seed: u64) -> (SynthData, ScoringConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut rng);
    let weights = [0.5, 1.0, 2.0];
    let cfg = ScoringConfig {
        k: rng.gen_range(1..=7),
        threshold: [0.3, 0.5, 0.7][rng.gen_range(0..3)],
        w_sim: if rng.gen_bool(0.1) { 0.0 } else { weights[rng.gen_range(0..3)] },
        w_conf: weights[rng.gen_range(0..3)],
        seed,
        ..Default::default()
    };
    (generate(&spec, seed.wrapping_mul(7919)), cfg)
}

fn random_labelling(rng: &mut ChaCha8Rng, queries: &[String], n_rel: usize) -> Labelling {
    queries
        .iter()
        .map(|q| {
            let labels: LabelSet = (0..n_rel).filter(|_| rng.gen_bool(0.3)).map(RelationId).collect();
            (q.clone(), labels)
        })
        .collect()
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// checks: each runs `n` seeded instances and reports the first mismatch

pub fn check_algorithm1(n: u64) -> Check {
    for seed in 0..n {
        let (d, cfg) = random_instance(seed);
        let providers = Providers::new(Some(&d.scores), Some(&d.embeddings));
        for q in &d.queries {
            let got = build_exemplar_set(&q.query_id, &d.corpus, providers, &cfg).map_err(|e| e.to_string())?;
            let got: Vec<(usize, String, String)> = got
                .exemplars
                .iter()
                .map(|e| (e.candidate_relation.0, e.source_bag_id.clone(), e.sentence.sentence_id.clone()))
                .collect();
            let want = oracle_exemplars(&q.query_id, &d, &cfg);
            ensure(got == want, || format!("seed {seed} query {}: got {got:?}, oracle {want:?}", q.query_id))?;
        }
    }
    Ok(())
}

pub fn check_candidates(n: u64) -> Check {
    for seed in 0..n {
        let (d, cfg) = random_instance(seed);
        for q in &d.queries {
            let got = select_candidates(&q.query_id, &d.scores, cfg.k).map_err(|e| e.to_string())?;
            let ids: Vec<usize> = got.iter().map(|(r, _)| r.0).collect();
            let want = oracle_candidates(d.scores.row(&q.query_id).unwrap(), cfg.k);
            ensure(ids == want, || format!("seed {seed}: {ids:?} vs {want:?}"))?;
        }
    }
    Ok(())
}

pub fn check_bag(n: u64) -> Check {
    for seed in 0..n {
        let (d, cfg) = random_instance(seed);
        let providers = Providers::new(Some(&d.scores), Some(&d.embeddings));
        for q in &d.queries {
            for r in 0..d.corpus.ontology.len() {
                let got = select_bag(&q.query_id, RelationId(r), &d.corpus, providers, &cfg).ok();
                let want = oracle_bag(&q.query_id, r, &d.corpus, &d.scores, &d.embeddings, cfg.w_sim, cfg.w_conf);
                ensure(got == want, || format!("seed {seed} r{r}: {got:?} vs {want:?}"))?;
            }
        }
    }
    Ok(())
}

pub fn check_sentence(n: u64) -> Check {
    for seed in 0..n {
        let (d, cfg) = random_instance(seed);
        for bag in d.corpus.bags.iter().filter(|b| !b.is_na()) {
            let got = select_sentence(bag, &d.scores, cfg.threshold).map_err(|e| e.to_string())?;
            let want = oracle_sentence(bag, &d.scores, cfg.threshold);
            ensure(got == want, || format!("seed {seed} bag {}: {got} vs {want}", bag.bag_id))?;
        }
    }
    Ok(())
}

pub fn check_reduce(n: u64) -> Check {
    for seed in 0..n {
        let (d, _) = random_instance(seed);
        for bag in &d.corpus.bags {
            let got: Vec<(usize, usize)> = reduce_bag(bag, &d.scores)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|(r, s)| (r.0, s))
                .collect();
            let want = oracle_reduce(bag, &d.scores);
            ensure(got == want, || format!("seed {seed} bag {}: {got:?} vs {want:?}", bag.bag_id))?;
        }
    }
    Ok(())
}

fn flat_ids(corpus: &Corpus) -> Vec<String> {
    flatten(corpus).iter().map(|e| e.sentence.sentence_id.clone()).collect()
}

pub fn check_topk(n: u64) -> Check {
    for seed in 0..n {
        let (d, cfg) = random_instance(seed);
        let flat = flatten(&d.corpus);
        let ids = flat_ids(&d.corpus);
        for q in &d.queries {
            let got: Vec<String> = topk_sim(&q.query_id, &flat, &d.embeddings, cfg.k)
                .map_err(|e| e.to_string())?
                .iter()
                .map(|e| e.sentence.sentence_id.clone())
                .collect();
            let want: Vec<String> = oracle_topk(&q.query_id, &ids, &d.embeddings, cfg.k)
                .into_iter()
                .map(|i| ids[i].clone())
                .collect();
            ensure(got == want, || format!("seed {seed}: {got:?} vs {want:?}"))?;
        }
    }
    Ok(())
}

pub fn check_mmr(n: u64) -> Check {
    for seed in 0..n {
        let (d, cfg) = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flat = flatten(&d.corpus);
        let ids = flat_ids(&d.corpus);
        let alpha = [0.0, 0.3, 0.5, 0.9, 1.0][rng.gen_range(0..5)];
        let pool = rng.gen_range(1..=ids.len());
        let k = cfg.k.min(pool);
        for q in &d.queries {
            let got: Vec<String> = mmr_select(&q.query_id, &flat, &d.embeddings, k, alpha, Some(pool))
                .map_err(|e| e.to_string())?
                .iter()
                .map(|e| e.sentence.sentence_id.clone())
                .collect();
            let want: Vec<String> = oracle_mmr(&q.query_id, &ids, &d.embeddings, k, alpha, pool)
                .into_iter()
                .map(|i| ids[i].clone())
                .collect();
            ensure(got == want, || format!("seed {seed} alpha {alpha}: {got:?} vs {want:?}"))?;
        }
    }
    Ok(())
}

/// alpha = 1 picks the same set as top-k similarity.
pub fn check_mmr_degenerate(n: u64) -> Check {
    for seed in 0..n {
        let (d, cfg) = random_instance(seed);
        let flat = flatten(&d.corpus);
        let k = cfg.k.min(flat.len());
        for q in &d.queries {
            let set = |v: Vec<hydre::baselines::FlatExample>| -> BTreeSet<String> {
                v.iter().map(|e| e.sentence.sentence_id.clone()).collect()
            };
            let mmr = set(mmr_select(&q.query_id, &flat, &d.embeddings, k, 1.0, None).map_err(|e| e.to_string())?);
            let top = set(topk_sim(&q.query_id, &flat, &d.embeddings, k).map_err(|e| e.to_string())?);
            ensure(mmr == top, || format!("seed {seed}: {mmr:?} vs {top:?}"))?;
        }
    }
    Ok(())
}

pub fn check_recall(n: u64) -> Check {
    for seed in 0..n {
        let (d, _) = random_instance(seed);
        let gold: Labelling = d.queries.iter().map(|q| (q.query_id.clone(), q.gold.clone())).collect();
        let n_rel = d.corpus.ontology.len();
        let mut prev = 0.0;
        for k in 1..=n_rel {
            let got = recall_at_k(&gold, &d.scores, k).map_err(|e| e.to_string())?;
            let want = oracle_recall(&gold, &d.scores, k);
            ensure((got - want).abs() <= 1e-12, || format!("seed {seed} k {k}: {got} vs {want}"))?;
            ensure(got >= prev, || format!("seed {seed}: recall decreased at k {k}"))?;
            prev = got;
        }
        ensure(prev == 1.0, || format!("seed {seed}: recall at |R| is {prev}"))?;
    }
    Ok(())
}

pub fn check_confusion(n: u64) -> Check {
    for seed in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ff);
        let n_rel = rng.gen_range(2..=8);
        let ontology = hydre::synth::ontology(n_rel);
        let queries: Vec<String> = (0..rng.gen_range(1..30)).map(|i| format!("q{i}")).collect();
        let gold = random_labelling(&mut rng, &queries, n_rel);
        let pred = random_labelling(&mut rng, &queries, n_rel);
        let a = rng.gen_range(0..n_rel);
        let b = (a + rng.gen_range(1..n_rel)) % n_rel;
        let pairs = vec![(ontology.name(RelationId(a)).to_owned(), ontology.name(RelationId(b)).to_owned())];
        let row = &confusion_pairs(&gold, &pred, &pairs, &ontology).map_err(|e| e.to_string())?[0];
        let got = [row.aa, row.ab, row.ba, row.bb];
        let want = oracle_confusion(&gold, &pred, a, b);
        ensure(got == want, || format!("seed {seed}: {got:?} vs {want:?}"))?;
    }
    Ok(())
}

/// The index's similarity agrees with the raw-vector formula.
pub fn check_similarity_primitive(n: u64) -> Check {
    for seed in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.gen_range(1..8);
        let vecs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let emb = EmbeddingIndex::from_vectors(vecs.iter().enumerate().map(|(i, v)| (format!("v{i}"), v.clone())))
            .map_err(|e| e.to_string())?;
        for i in 0..vecs.len() {
            for j in 0..vecs.len() {
                let got = emb.similarity(&format!("v{i}"), &format!("v{j}")).unwrap();
                let want = raw_cosine01(&vecs[i], &vecs[j]);
                ensure((got - want).abs() <= 1e-12, || format!("seed {seed}: {got} vs {want}"))?;
            }
        }
    }
    Ok(())
}

pub fn gold_of(d: &SynthData) -> BTreeMap<String, LabelSet> {
    d.queries.iter().map(|q| (q.query_id.clone(), q.gold.clone())).collect()
}
