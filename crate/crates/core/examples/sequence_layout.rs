//! Assemble one episode into each training-sequence variant and dump its
//! element list, attention mask (PBM) and RoPE positions.
//!
//! ```text
//! cargo run --release --example sequence_layout -- --variant tv2tv --out target/toy/layout
//! ```

use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tv2tv::codec::{LatentCodec, Vocab};
use tv2tv::masking::{assign_positions, build_mask, mask_to_pbm};
use tv2tv::sequence::{assemble, NoiseConfig, Variant};
use tv2tv::toyworld::{gen_episode, Policy};

#[derive(Parser)]
struct Args {
    #[arg(long, value_enum, default_value_t = Variant::Tv2tv)]
    variant: Variant,
    #[arg(long, default_value_t = 2)]
    chunks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "target/toy/layout")]
    out: PathBuf,
}

fn main() -> Result<()> {
    let a = Args::parse();
    let ep = gen_episode(a.seed, a.chunks, Policy::Random)?;
    let vocab = Vocab::default();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let seq = assemble(&ep, a.variant, &LatentCodec::shared_default(), &vocab, &mut rng, &NoiseConfig::default())?;
    for line in seq.debug_lines() {
        println!("{line}");
    }

    let layout = seq.layout();
    let mask = build_mask(&layout)?;
    let pos = assign_positions(&layout)?;
    std::fs::create_dir_all(&a.out)?;
    let pbm = a.out.join(format!("mask_{}.pbm", a.variant));
    std::fs::write(&pbm, mask_to_pbm(&mask.to_dense()))?;
    seq.write_debug(&a.out.join(format!("sequence_{}.jsonl", a.variant)))?;
    let visible: usize = mask.rows.iter().flatten().map(|(s, e)| e - s).sum();
    println!(
        "{} tokens, {} elements, {visible} visible pairs ({:.1}% dense); rope ids 0..={}",
        layout.len(),
        layout.elements()?.len(),
        100.0 * visible as f64 / (layout.len() * layout.len()) as f64,
        pos.rope_ids.iter().max().copied().unwrap_or(0)
    );
    println!("text stream: {}", vocab.decode(&seq.text_stream()));
    println!("mask written to {}", pbm.display());
    Ok(())
}
