//! Generate past the context window: each time the window fills, the
//! second half of the chunks is kept and generation continues.
//!
//! ```text
//! cargo run --release --example sliding_window -- --windows 4
//! ```

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Parser;
use tv2tv::eval::{eval_start, sprite_found_rate};
use tv2tv::inference::{Engine, Event, GenConfig, Status};
use tv2tv::model::{ModelConfig, Params};
use tv2tv::sequence::Variant;
use tv2tv::toyworld::WorldConfig;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "target/acceptance/tv2tv/final.ckpt")]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 4)]
    windows: usize,
    #[arg(long, default_value_t = 0)]
    start: u64,
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
    let gen = GenConfig::default();
    let (w, keep) = (gen.window_chunks, gen.window_chunks.div_ceil(2));
    let total = w + a.windows.saturating_sub(1) * (w - keep);
    let (prompt, frame) = eval_start(a.start)?;
    let mut s = engine.start(
        &prompt,
        Some(&frame),
        GenConfig {
            auto_extend: true,
            max_chunks: total,
            max_elements: usize::MAX,
            ..gen
        },
    )?;
    while s.status() != Status::Done {
        let before = s.window_len();
        if let Event::Chunk { chunk_index, latent, .. } = s.step()? {
            let slid = if s.window_len() <= before { " (window slid)" } else { "" };
            println!(
                "chunk {chunk_index:>2}: window holds {} chunks, finite {}{slid}",
                s.window_len(),
                latent.is_finite()
            );
        }
    }
    let rate = sprite_found_rate(&s.frames()[1..], &WorldConfig::default());
    println!(
        "{} chunks over {} windows; sprite found in {:.1}% of frames",
        s.chunks_generated(),
        a.windows,
        100.0 * rate
    );
    Ok(())
}
