//! The whole experiment on the bundled fixture, offline: select, render,
//! judge from the committed response cache, and score. Same steps as
//! `hydre validate/select/run/eval`.
//!
//!     cargo run --example replay_pipeline [strategy]

use std::path::Path;

use hydre::cli::{cmd_eval, cmd_run, cmd_select, cmd_validate};
use hydre::config::{Overrides, RunConfig};
use hydre::evaluation::summary_table;
use hydre::judge::FailOnDispatch;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/nyt");
    let strategy = std::env::args().nth(1).unwrap_or_else(|| "hydre".into());
    let out = std::env::temp_dir().join(format!("hydre-replay-{}", std::process::id()));

    let mut cfg = RunConfig::load(&dir.join("run.toml"))?;
    cfg.apply(&Overrides {
        strategy: Some(strategy.parse()?),
        output: Some(out.clone()),
        ..Default::default()
    });
    cfg.validate()?;

    print!("{}", cmd_validate(&cfg)?);
    println!("selected for {} queries", cmd_select(&cfg)?);
    let backend = FailOnDispatch::default();
    println!("{}", cmd_run(&cfg, None, &backend)?);
    let report = cmd_eval(&cfg, None, None)?;
    print!("{}", summary_table(&report, &strategy));
    println!("outputs in {}", out.display());
    Ok(())
}
