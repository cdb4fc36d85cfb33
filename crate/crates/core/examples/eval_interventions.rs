//! Intervention accuracy against matched-seed no-op controls, per action,
//! for one or more checkpoints side by side.
//!
//! ```text
//! cargo run --release --example eval_interventions -- \
//!     --ckpt target/acceptance/tv2tv/final.ckpt --ckpt target/acceptance/think2v/final.ckpt --rollouts 20
//! ```

use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use tv2tv::eval::{variant_eval, InterventionEvalConfig};
use tv2tv::inference::Engine;

#[derive(Parser)]
struct Args {
    #[arg(long, required = true)]
    ckpt: Vec<PathBuf>,
    #[arg(long, default_value_t = 20)]
    rollouts: usize,
    #[arg(long, default_value_t = 2)]
    fork_after: usize,
    #[arg(long, default_value = "target/toy/eval")]
    out: PathBuf,
}

fn main() -> Result<()> {
    let a = Args::parse();
    let engines = a.ckpt.iter().map(|p| Engine::load(p)).collect::<Result<Vec<_>, _>>()?;
    let cfg = InterventionEvalConfig {
        rollouts: a.rollouts,
        fork_after: a.fork_after,
        ..InterventionEvalConfig::default()
    };
    let report = variant_eval(&engines, &cfg)?;
    for r in &report.variants {
        println!("{}\n{}", r.variant, r.table());
    }
    println!("{}", report.table());
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(a.out.join("report.svg"), report.svg())?;
    println!("report.json and report.svg in {}", a.out.display());
    Ok(())
}
