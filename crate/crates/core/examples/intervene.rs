//! Steer a rollout mid-generation: fork a session after chunk k, inject an
//! action string into one copy, and compare what the oracle reads from the
//! next chunk of both.
//!
//! ```text
//! cargo run --release --example intervene -- --text "(left)." --fork-after 2
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Parser;
use tv2tv::eval::{advance_to_chunks, chunk_action, eval_start};
use tv2tv::inference::{Engine, GenConfig};
use tv2tv::model::{ModelConfig, Params};
use tv2tv::sequence::Variant;
use tv2tv::toyworld::WorldConfig;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "target/acceptance/tv2tv/final.ckpt")]
    ckpt: PathBuf,
    #[arg(long, default_value = "(left).")]
    text: String,
    #[arg(long, default_value_t = 2)]
    fork_after: usize,
    /// Number of starting states to try.
    #[arg(long, default_value_t = 5)]
    rollouts: u64,
}

fn engine(ckpt: &Path) -> Result<Engine> {
    if ckpt.exists() {
        return Ok(Engine::load(ckpt)?);
    }
    eprintln!("{} not found; using an untrained model (run the train_toy example first)", ckpt.display());
    Ok(Engine::new(Params::init(&ModelConfig::default(), 0), Variant::Tv2tv)?)
}

fn main() -> Result<()> {
    let a = Args::parse();
    let engine = engine(&a.ckpt)?;
    let world = WorldConfig::default();
    let k = a.fork_after;
    for i in 0..a.rollouts {
        let (prompt, frame) = eval_start(i)?;
        let cfg = GenConfig {
            seed: i,
            max_chunks: k + 1,
            ..GenConfig::default()
        };
        let mut base = engine.start(&prompt, Some(&frame), cfg)?;
        if !advance_to_chunks(&mut base, k)? {
            bail!("rollout {i} ended before chunk {k}");
        }
        // same seed, same history: only the injected text differs
        let mut steered = base.clone();
        let at = steered.intervene(&a.text)?;
        base.run_to_end()?;
        steered.run_to_end()?;
        let show = |x: Option<tv2tv::toyworld::ActionString>| x.map_or("unreadable".to_string(), |a| a.to_string());
        println!(
            "start {i}: at {at:.4} s, no-op → {}, \"{}\" → {}",
            show(chunk_action(&base, k + 1, &world)),
            a.text,
            show(chunk_action(&steered, k + 1, &world))
        );
    }
    Ok(())
}
