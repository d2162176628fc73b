//! The judge in both modes: a live pass against an in-process backend fills
//! a response cache file, and a replay pass answers the same prompts from
//! that file with a backend that refuses every call.
//!
//!     cargo run --example judge_replay

use hydre::judge::{run_batch, FailOnDispatch, FnBackend, GenerationParams, Job, Judge, Mode, ReplayCache};
use hydre::synth::ontology;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let relations = ontology(4);
    let dir = tempfile_dir()?;
    let cache_path = dir.join("cache.jsonl");
    let params = GenerationParams::default();
    let jobs: Vec<Job> = (0..6)
        .map(|i| Job {
            query_id: format!("q{i}"),
            prompt: format!("Which relation holds in example {i}?\nOutput:"),
        })
        .collect();

    // Stand-in for a chat model: answers from the example number.
    let model = FnBackend::new(|prompt: &str| {
        let n = prompt.chars().find_map(|c| c.to_digit(10)).unwrap_or(0);
        Ok(if n % 3 == 0 { "NA".to_owned() } else { format!("/synthetic/rel_{}", n % 4) })
    });
    let live = Judge::new(&model, ReplayCache::open(&cache_path)?, params.clone(), Mode::Live);
    for r in run_batch(&jobs, &live, &relations, 3) {
        println!("live   {} -> {:?}", r.query_id, relations.label_names(&r.prediction.relations));
    }
    println!("backend calls: {}\n", model.calls());

    let offline = FailOnDispatch::default();
    let replay = Judge::new(&offline, ReplayCache::open_read_only(&cache_path)?, params, Mode::Replay);
    for r in run_batch(&jobs, &replay, &relations, 3) {
        println!("replay {} -> {:?} (cached: {})", r.query_id, r.response.unwrap_or_default(), r.cached);
    }
    println!("dispatch attempts in replay: {}", offline.attempts());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("hydre-judge-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
