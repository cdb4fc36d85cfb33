//! Generate a toy corpus (if missing) and train one sequence variant on it.
//!
//! ```text
//! cargo run --release --example train_toy -- --variant tv2tv --steps 5000
//! ```

use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use tv2tv::model::ModelConfig;
use tv2tv::sequence::Variant;
use tv2tv::toyworld::{gen_dataset, list_episode_dirs, Policy};
use tv2tv::training::{train, TrainConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "target/toy/data")]
    data: PathBuf,
    #[arg(long, default_value = "target/toy/run")]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    episodes: usize,
    #[arg(long, default_value_t = 4)]
    chunks: usize,
    #[arg(long, value_enum, default_value_t = Variant::Tv2tv)]
    variant: Variant,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();
    let a = Args::parse();
    if !a.data.exists() || list_episode_dirs(&a.data)?.is_empty() {
        gen_dataset(&a.data, a.episodes, a.seed, a.chunks, Policy::Random)?;
    }
    let cfg = TrainConfig {
        steps: a.steps,
        batch_size: a.batch,
        lr_max: a.lr,
        variant: a.variant,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let out = train(&ModelConfig::default(), &cfg, &a.data, &a.out)?;
    let m = &out.metrics;
    let head: f64 = m.iter().take(50).map(|r| r.loss_vid).sum::<f64>() / m.len().min(50) as f64;
    let last = m.last().expect("at least one step");
    println!(
        "vid loss: first-50 mean {head:.4} -> final {:.4}; txt loss final {:.4}",
        last.loss_vid, last.loss_txt
    );
    println!("checkpoint: {}", out.final_checkpoint.display());
    Ok(())
}
