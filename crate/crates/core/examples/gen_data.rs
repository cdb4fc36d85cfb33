//! Render toy-world episodes and write them as a training corpus.
//!
//! ```text
//! cargo run --release --example gen_data -- --episodes 16 --out target/toy/sample
//! ```

use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use tv2tv::toyworld::{chunk_timestamp, gen_dataset, gen_episode, write_png, Policy};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "target/toy/sample")]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    episodes: usize,
    #[arg(long, default_value_t = 4)]
    chunks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    let a = Args::parse();
    let dirs = gen_dataset(&a.out, a.episodes, a.seed, a.chunks, Policy::Random)?;
    println!("wrote {} episodes under {}", dirs.len(), a.out.display());

    // walk through one episode: prompt, per-chunk action strings, frames as PNG
    let ep = gen_episode(a.seed, a.chunks, Policy::Random)?;
    println!("prompt: {}", ep.meta_prompt);
    for (i, action) in ep.actions.iter().enumerate() {
        println!("  chunk {} @ {:.4} s: {action}", i + 1, chunk_timestamp(i + 1));
    }
    let png_dir = a.out.join("preview");
    std::fs::create_dir_all(&png_dir)?;
    for (i, f) in ep.frames.iter().enumerate() {
        write_png(&png_dir.join(format!("frame_{i:04}.png")), f)?;
    }
    println!(
        "{} frames of {}×{} px in {}",
        ep.frames.len(),
        ep.config.frame_height(),
        ep.config.frame_width(),
        png_dir.display()
    );
    Ok(())
}
