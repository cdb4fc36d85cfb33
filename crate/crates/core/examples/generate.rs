//! Interleaved rollout: the model alternates plan text and 4-frame chunks
//! from a prompt and a conditioning frame.
//!
//! ```text
//! cargo run --release --example generate -- --ckpt target/acceptance/tv2tv/final.ckpt --out target/toy/rollout
//! ```

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Parser;
use tv2tv::eval::eval_start;
use tv2tv::inference::{Engine, Event, GenConfig, Source};
use tv2tv::model::{ModelConfig, Params};
use tv2tv::sequence::Variant;
use tv2tv::toyworld::write_png;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "target/acceptance/tv2tv/final.ckpt")]
    ckpt: PathBuf,
    #[arg(long, default_value = "target/toy/rollout")]
    out: PathBuf,
    /// Episode whose prompt and first frame start the rollout.
    #[arg(long, default_value_t = 0)]
    start: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    cfg_scale: f64,
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
    let (prompt, frame) = eval_start(a.start)?;
    let cfg = GenConfig {
        seed: a.seed,
        cfg_scale: a.cfg_scale,
        ..GenConfig::default()
    };
    let mut s = engine.start(&prompt, Some(&frame), cfg)?;
    println!("[user] {prompt}");
    for ev in s.run_to_end()? {
        match ev {
            Event::Text { text, timestamp_s, source, .. } => {
                let who = if source == Source::User { "user" } else { "model" };
                println!("{timestamp_s:>7.4} s [{who}] {text}");
            }
            Event::Chunk {
                chunk_index,
                timestamp_s,
                latent,
                ..
            } => {
                println!("{timestamp_s:>7.4} s [model] chunk {chunk_index} ({})", latent.checksum());
            }
            Event::Done { reason } => println!("done: {reason:?}"),
        }
    }
    std::fs::create_dir_all(&a.out)?;
    for (i, f) in s.frames().iter().enumerate() {
        write_png(&a.out.join(format!("frame_{i:04}.png")), f)?;
    }
    std::fs::write(a.out.join("transcript.jsonl"), s.transcript_jsonl())?;
    println!("{} frames and transcript.jsonl in {}", s.frames().len(), a.out.display());
    Ok(())
}
