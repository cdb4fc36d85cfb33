//! HTTP session API for interactive steering.
//!
//! ```text
//! cargo run --release --example serve -- --ckpt target/acceptance/tv2tv/final.ckpt
//! curl -s -XPOST localhost:8080/sessions -d '{"prompt":"a red sprite.","config":{"seed":1}}'
//! curl -s -XPOST localhost:8080/sessions/<id>/step -d '{"n_events":8}'
//! curl -s -XPOST localhost:8080/sessions/<id>/intervene -d '{"text":"(left)."}'
//! curl -s localhost:8080/sessions/<id>/transcript
//! ```

use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;
use tv2tv::inference::Engine;
use tv2tv::service::{serve, DEFAULT_BIND};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value = "target/acceptance/tv2tv/final.ckpt")]
    ckpt: PathBuf,
    #[arg(long, default_value = DEFAULT_BIND)]
    bind: String,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();
    let a = Args::parse();
    let engine = Engine::load(&a.ckpt)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(engine, a.bind.parse()?))?;
    Ok(())
}
